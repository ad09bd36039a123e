"""Exception types shared across the package."""


class BicnnError(Exception):
    """Base class for all package errors."""


class GeometryError(BicnnError, ValueError):
    """Array shapes do not fit the requested operation."""


class LabelError(BicnnError, ValueError):
    """A class label is outside the valid range."""


class MissingCacheError(BicnnError, RuntimeError):
    """Backward pass requested before a forward pass populated the caches."""


class EmptySignalError(BicnnError, ValueError):
    pass


class MissingModalityError(BicnnError, KeyError):
    pass


class InsufficientDataError(BicnnError, ValueError):
    pass


class EmptyCorpusError(BicnnError, ValueError):
    pass


class LengthOverflowError(BicnnError, ValueError):
    pass


class InvalidIdError(BicnnError, IndexError):
    pass


class EmbeddingFormatError(BicnnError, ValueError):
    """Malformed embedding file; ``lineno`` is 1-based."""

    def __init__(self, message, lineno=None):
        super().__init__(message if lineno is None else f"line {lineno}: {message}")
        self.lineno = lineno


class AlignmentError(BicnnError, ValueError):
    """Two per-sample collections are not keyed by the same ids."""


class ShapeError(BicnnError, ValueError):
    pass


class SchemaError(BicnnError, ValueError):
    pass


class ConfigError(BicnnError, ValueError):
    pass
