"""The three networks: PhysCNN (1-D), LingCNN (2-D) and the BiModal fusion head."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import AlignmentError, GeometryError
from .nncore import ConvBank, Dense, Network

N_CLASSES = 2
TRUTHFUL, DECEPTIVE = 0, 1
MODALITIES = ("physiological", "linguistic", "bimodal")
MIN_TRANSCRIPT_ROWS = 5


@dataclass(frozen=True)
class NetworkSpec:
    """Self-describing architecture record, stored next to checkpoints."""

    modality: str
    input_shape: tuple
    filter_sizes: tuple = (3, 4, 5)
    filters_per_size: int = 8
    classes: int = N_CLASSES
    # "logits" or "probs": what the fusion head consumes from the unimodal nets.
    fusion_input: str = "logits"

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.classes != N_CLASSES:
            raise ValueError("only binary classification is supported")
        if self.fusion_input not in ("logits", "probs"):
            raise ValueError("fusion_input must be 'logits' or 'probs'")

    def to_dict(self):
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        d["filter_sizes"] = list(self.filter_sizes)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["input_shape"] = tuple(d["input_shape"])
        d["filter_sizes"] = tuple(d["filter_sizes"])
        return cls(**d)


def phys_spec(filters_per_size=8, input_dim=32):
    return NetworkSpec("physiological", (input_dim,), filters_per_size=filters_per_size)


def ling_spec(M, filters_per_size=8, embed_dim=32):
    return NetworkSpec("linguistic", (M, embed_dim), filters_per_size=filters_per_size)


def bimodal_spec(fusion_input="logits"):
    return NetworkSpec("bimodal", (2 * N_CLASSES,), filter_sizes=(), filters_per_size=0,
                       fusion_input=fusion_input)


def build_network(spec, n_replicas=1, seeds=None):
    """Instantiate ``spec`` with ``n_replicas`` replicas, initialised from ``seeds``."""
    F = spec.filters_per_size
    if spec.modality == "bimodal":
        banks = []
        head = Dense("fusion", 2 * spec.classes, spec.classes)
    else:
        ndim = 1 if spec.modality == "physiological" else 2
        prefix = "phys" if ndim == 1 else "ling"
        banks = [ConvBank(f"{prefix}.conv{s}", s, F, ndim) for s in spec.filter_sizes]
        head = Dense(f"{prefix}.dense", F * len(spec.filter_sizes), spec.classes)
    net = Network(banks, head, n_replicas)
    net.spec = spec
    if seeds is not None:
        net.initialize(seeds)
    return net


def parameter_census(net):
    """Per-parameter element counts for one replica, plus the total."""
    census = {n: int(np.prod(s)) for n, s in net.param_shapes.items()}
    census["total"] = sum(census.values())
    return census


def _single(net, x, shape):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != shape:
        raise GeometryError(f"expected input of shape {shape}, got {x.shape}")
    return net.forward(x[None])[:, 0, :]


def phys_forward(x, net):
    """Class scores (G, 2) for one 32-d physiological vector."""
    return _single(net, x, tuple(net.spec.input_shape))


def ling_forward(x, net):
    """Class scores (G, 2) for one M x 32 embedded transcript."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < MIN_TRANSCRIPT_ROWS:
        raise GeometryError(
            f"transcript array must have at least {MIN_TRANSCRIPT_ROWS} rows, got shape {x.shape}")
    return _single(net, x, tuple(net.spec.input_shape))


def fusion_features(ling_scores, phys_scores, fusion_input="logits", ling_ids=None, phys_ids=None):
    """Concatenate unimodal scores, linguistic first, along the last axis."""
    if ling_ids is not None and phys_ids is not None and list(ling_ids) != list(phys_ids):
        raise AlignmentError("linguistic and physiological scores are keyed by different sample ids")
    ling_scores = np.asarray(ling_scores, dtype=np.float64)
    phys_scores = np.asarray(phys_scores, dtype=np.float64)
    if ling_scores.shape != phys_scores.shape:
        raise AlignmentError(
            f"score arrays disagree in shape: {ling_scores.shape} vs {phys_scores.shape}")
    if fusion_input == "probs":
        ling_scores, phys_scores = _softmax(ling_scores), _softmax(phys_scores)
    return np.concatenate([ling_scores, phys_scores], axis=-1)


def _softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def bimodal_forward(ling_scores, phys_scores, net, ling_ids=None, phys_ids=None):
    """Fusion-head scores for aligned unimodal scores.

    Accepts single score vectors (2,), batches (N, 2) or per-replica batches
    (G, N, 2). Returns (G, 2), (G, N, 2) or (G, N, 2) respectively.
    """
    feats = fusion_features(ling_scores, phys_scores, net.spec.fusion_input, ling_ids, phys_ids)
    if feats.ndim == 1:
        return net.forward(feats[None])[:, 0, :]
    return net.forward(feats)


def predict(scores):
    """Argmax over the last axis; an exact tie goes to deceptive (1)."""
    scores = np.asarray(scores, dtype=np.float64)
    return (scores[..., DECEPTIVE] >= scores[..., TRUTHFUL]).astype(np.int64)
