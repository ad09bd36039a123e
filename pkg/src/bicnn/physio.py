"""Physiological descriptors (59 per recording) and PCA down to 32 dimensions.

All descriptors are whole-recording statistics. The ordering of the 59
features is fixed by ``data/physio_manifest.tsv``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.signal import find_peaks

from .errors import (EmptySignalError, GeometryError, InsufficientDataError,
                     MissingModalityError, SchemaError)

SENSORS = ("heart_rate", "skin_conductance", "skin_temperature", "respiration")
STREAM_HEADER = ["time_s", *SENSORS]
DESCRIPTORS = ("max", "min", "mean", "rms", "std", "amp")

EPOCH_SECONDS = 1.0
BEAT_REFRACTORY_S = 0.25
BREATH_REFRACTORY_S = 1.5
MANIFEST_VERSION = "1"


@dataclass(frozen=True)
class SensorStream:
    sensor_kind: str
    sample_rate: float
    samples: np.ndarray

    def __post_init__(self):
        if self.sensor_kind not in SENSORS:
            raise ValueError(f"unknown sensor kind {self.sensor_kind!r}")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise EmptySignalError(f"{self.sensor_kind}: stream has no samples")
        if not np.all(np.isfinite(samples)):
            raise ValueError(f"{self.sensor_kind}: non-finite samples")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self):
        return self.samples.size / self.sample_rate

    @property
    def epoch_length(self):
        return max(1, int(round(EPOCH_SECONDS * self.sample_rate)))


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def load_manifest():
    """Return the manifest as a list of ``(name, formula)`` in feature order."""
    text = resources.files("bicnn").joinpath("data/physio_manifest.tsv").read_text()
    rows = []
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        idx, name, formula = line.split("\t")
        if idx == "index":
            continue
        if int(idx) != len(rows):
            raise SchemaError(f"manifest index {idx} out of order")
        rows.append((name, formula))
    return rows


def feature_names():
    return [name for name, _ in load_manifest()]


# ---------------------------------------------------------------------------
# Descriptors
# ---------------------------------------------------------------------------

def mean_epoch_amplitude(signal, epoch_length):
    """Mean of (max - min) over consecutive epochs.

    A trailing partial epoch counts if it holds at least half an epoch. A
    signal shorter than that is treated as a single epoch.
    """
    x = np.asarray(signal, dtype=np.float64)
    n_full = x.size // epoch_length
    spans = [x[i * epoch_length:(i + 1) * epoch_length] for i in range(n_full)]
    tail = x[n_full * epoch_length:]
    if tail.size and 2 * tail.size >= epoch_length:
        spans.append(tail)
    if not spans:
        spans = [x]
    return float(np.mean([s.max() - s.min() for s in spans]))


def descriptor_set(signal, epoch_length=32):
    """(max, min, mean, rms, std, mean epoch amplitude) of a 1-D signal.

    ``std`` uses the population denominator; rms is the power mean with
    exponent 2.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.size == 0:
        raise EmptySignalError("descriptor_set: empty signal")
    return (float(x.max()), float(x.min()), float(x.mean()),
            float(np.sqrt(np.mean(x * x))), float(x.std()),
            mean_epoch_amplitude(x, epoch_length))


def detect_peaks(x, sample_rate, refractory_s):
    """Local maxima strictly above the signal mean, at least ``refractory_s`` apart."""
    x = np.asarray(x, dtype=np.float64)
    distance = max(1, int(round(refractory_s * sample_rate)))
    peaks, _ = find_peaks(x, height=np.nextafter(x.mean(), np.inf), distance=distance)
    return peaks


def _step_series(peaks, values):
    """Hold each inter-peak value over the samples of its interval."""
    if len(values) == 0:
        return np.zeros(1)
    return np.repeat(values, np.diff(peaks))


def _rate_from_peaks(peaks, sample_rate):
    if len(peaks) < 2:
        return 0.0
    span = (peaks[-1] - peaks[0]) / sample_rate
    return 60.0 * (len(peaks) - 1) / span


def heart_features(stream):
    """The 40 heart-rate features, keyed by manifest name."""
    x, fs, ep = stream.samples, stream.sample_rate, stream.epoch_length
    peaks = detect_peaks(x, fs, BEAT_REFRACTORY_S)
    ibi_ms = np.diff(peaks) / fs * 1000.0
    rate = 60000.0 / ibi_ms if ibi_ms.size else np.zeros(0)

    ibi_series = _step_series(peaks, ibi_ms)
    rate_series = _step_series(peaks, rate)
    diff_series = np.diff(x) if x.size > 1 else np.zeros(1)
    n_epochs = max(1, x.size // ep)
    beats_per_epoch = np.bincount(np.minimum(peaks // ep, n_epochs - 1), minlength=n_epochs)
    epoch_rate = beats_per_epoch[:n_epochs] * (60.0 / (ep / fs))

    out = {}
    for prefix, series in (("hr_raw", x), ("hr_ibi", ibi_series), ("hr_rate", rate_series),
                           ("hr_diff", diff_series), ("hr_epoch_rate", epoch_rate)):
        for d, v in zip(DESCRIPTORS, descriptor_set(series, ep)):
            out[f"{prefix}_{d}"] = v

    succ = np.diff(ibi_ms)
    out["hr_beat_count"] = float(len(peaks))
    out["hr_count_rate"] = _rate_from_peaks(peaks, fs)
    out["hr_rmssd"] = float(np.sqrt(np.mean(succ ** 2))) if succ.size else 0.0
    out["hr_sdsd"] = float(succ.std()) if succ.size else 0.0
    out["hr_nn50"] = float(np.sum(np.abs(succ) > 50.0))
    out["hr_pnn50"] = float(np.mean(np.abs(succ) > 50.0)) if succ.size else 0.0
    out["hr_ibi_median"] = float(np.median(ibi_ms)) if ibi_ms.size else 0.0
    out["hr_ibi_cv"] = float(ibi_ms.std() / ibi_ms.mean()) if ibi_ms.size else 0.0
    out["hr_rate_median"] = float(np.median(rate)) if rate.size else 0.0
    if rate.size:
        q75, q25 = np.percentile(rate, [75, 25])
        out["hr_rate_iqr"] = float(q75 - q25)
    else:
        out["hr_rate_iqr"] = 0.0
    return out, rate_series


def extract_features(streams):
    """Map the four sensor streams of one recording to the 59-feature vector.

    ``streams`` is a mapping from sensor kind to :class:`SensorStream`.
    """
    for kind in SENSORS:
        if kind not in streams or streams[kind] is None:
            raise MissingModalityError(f"missing sensor stream: {kind}")
    feats, rate_series = heart_features(streams["heart_rate"])
    for kind, prefix in (("skin_conductance", "sc"), ("skin_temperature", "temp")):
        s = streams[kind]
        for d, v in zip(DESCRIPTORS[:5], descriptor_set(s.samples, s.epoch_length)[:5]):
            feats[f"{prefix}_{d}"] = v
    resp = streams["respiration"]
    for d, v in zip(DESCRIPTORS, descriptor_set(resp.samples, resp.epoch_length)):
        feats[f"resp_{d}"] = v
    breaths = detect_peaks(resp.samples, resp.sample_rate, BREATH_REFRACTORY_S)
    resp_bpm = _rate_from_peaks(breaths, resp.sample_rate)
    feats["resp_bpm"] = resp_bpm
    mean_hr = float(rate_series.mean())
    feats["hr_resp_ratio"] = mean_hr / resp_bpm if resp_bpm > 0 else 0.0
    feats["hr_range"] = float(rate_series.max() - rate_series.min())

    names = feature_names()
    if set(names) != set(feats) or len(names) != len(feats):
        raise SchemaError("computed features do not match the manifest")
    return np.array([feats[n] for n in names])


# ---------------------------------------------------------------------------
# Stream and feature files
# ---------------------------------------------------------------------------

def write_stream_csv(path, sample_rate, columns):
    """Write one recording; ``columns`` maps sensor kind to equal-length arrays."""
    n = len(columns[SENSORS[0]])
    with open(path, "w", newline="") as fh:
        fh.write(f"# sample_rate_hz={sample_rate:g}\n")
        fh.write(",".join(STREAM_HEADER) + "\n")
        for i in range(n):
            vals = [f"{i / sample_rate:.6f}"] + [f"{columns[k][i]:.8g}" for k in SENSORS]
            fh.write(",".join(vals) + "\n")


def read_stream_csv(path):
    """Read a recording written by :func:`write_stream_csv` into SensorStreams."""
    path = Path(path)
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("# sample_rate_hz="):
            raise SchemaError(f"{path}: missing '# sample_rate_hz=' comment line")
        try:
            rate = float(first.split("=", 1)[1])
        except ValueError:
            raise SchemaError(f"{path}: unreadable sample rate {first!r}") from None
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != STREAM_HEADER:
            raise SchemaError(f"{path}: unexpected header {header}")
        try:
            data = np.array([[float(v) for v in row] for row in reader if row], dtype=np.float64)
        except ValueError as exc:
            raise SchemaError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] != len(STREAM_HEADER):
        raise SchemaError(f"{path}: no samples or ragged rows")
    return {k: SensorStream(k, rate, data[:, i + 1]) for i, k in enumerate(SENSORS)}


def write_feature_csv(path, sample_ids, matrix, names):
    matrix = np.asarray(matrix)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["sample_id", *names]) + "\n")
        for sid, row in zip(sample_ids, matrix):
            fh.write(",".join([sid, *(format(float(v), ".17g") for v in row)]) + "\n")


def read_feature_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        ids, rows = [], []
        for row in reader:
            ids.append(row[0])
            rows.append([float(v) for v in row[1:]])
    return ids, header[1:], np.array(rows, dtype=np.float64).reshape(len(ids), len(header) - 1)


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (k, d), rows orthonormal
    explained_variance: np.ndarray

    @property
    def n_components(self):
        return self.components.shape[0]


def pca_fit(X, k=32):
    """Covariance eigendecomposition PCA keeping the top ``k`` directions.

    Each component is signed so that its largest-magnitude entry is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InsufficientDataError(f"pca_fit needs at least 2 rows, got shape {X.shape}")
    n, d = X.shape
    if not 1 <= k <= d:
        raise GeometryError(f"k={k} must lie in [1, {d}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals, kind="stable")[::-1][:k]
    comps = evecs[:, order].T.copy()
    pivot = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(k), pivot])
    comps *= signs[:, None]
    variances = np.clip(evals[order], 0.0, None)
    return PcaModel(mean=mean, components=comps, explained_variance=variances)


def pca_transform(model, x):
    """Project one vector (d,) or a batch (n, d) onto the model's components."""
    x = np.asarray(x, dtype=np.float64)
    d = model.mean.shape[0]
    if x.shape[-1] != d or x.ndim not in (1, 2):
        raise GeometryError(f"pca_transform expects length-{d} input, got shape {x.shape}")
    return (x - model.mean) @ model.components.T
