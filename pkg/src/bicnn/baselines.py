"""Classical baselines on concatenated unigram + physiological features.

Decision tree (CART, Gini, voted over seeded runs), linear SVM and logistic
regression, all written against plain numpy.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, InsufficientDataError
from .pipeline import (SplitIndex, compute_metrics, derive_seed, majority_vote, sha256_file)

BASELINE_MODELS = ("decision_tree", "svm", "logistic_regression")
COMPARISON_ROWS = (*BASELINE_MODELS, "bimodal_cnn")
TIE_TOL = 1e-12


# ---------------------------------------------------------------------------
# Decision tree
# ---------------------------------------------------------------------------

@dataclass
class TreeNode:
    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    label: int | None = None
    counts: tuple = (0, 0)

    @property
    def is_leaf(self):
        return self.feature is None

    def depth(self):
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())

    def n_leaves(self):
        return 1 if self.is_leaf else self.left.n_leaves() + self.right.n_leaves()


def gini(n_pos, n):
    """Gini impurity of a node with ``n_pos`` positives among ``n`` samples."""
    if n == 0:
        return 0.0
    p = n_pos / n
    return 1.0 - p * p - (1.0 - p) * (1.0 - p)


def split_gains(X, y):
    """Gini gain of every candidate split.

    Returns ``(gain, thresholds)``, both (m - 1, d): entry ``[i, j]`` is the
    split of feature ``j`` between its ``i``-th and ``i+1``-th smallest
    values, or ``-inf`` where those values are equal.
    """
    m, d = X.shape
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    ys = y[order]
    left_pos = np.cumsum(ys, axis=0)[:-1].astype(np.float64)
    n_left = np.arange(1, m, dtype=np.float64)[:, None]
    n_right = m - n_left
    total_pos = float(y.sum())
    right_pos = total_pos - left_pos
    pl = left_pos / n_left
    pr = right_pos / n_right
    g_left = 1.0 - pl * pl - (1.0 - pl) ** 2
    g_right = 1.0 - pr * pr - (1.0 - pr) ** 2
    gain = gini(total_pos, m) - (n_left * g_left + n_right * g_right) / m
    valid = xs[1:] != xs[:-1]
    gain = np.where(valid, gain, -np.inf)
    thresholds = 0.5 * (xs[1:] + xs[:-1])
    return gain, thresholds


def _leaf(y):
    pos = int(y.sum())
    neg = int(y.size - pos)
    return TreeNode(label=int(pos >= neg), counts=(neg, pos))


def fit_decision_tree(X, y, seed=0, max_depth=None):
    """Greedy CART tree with Gini gain.

    Impure nodes are split whenever any feature still varies, even at zero
    gain. Randomness per ``seed``: the feature order is shuffled and ties
    among equally good splits are broken uniformly at random.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InsufficientDataError("decision tree needs at least one sample")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(X.shape[1])
    Xp = X[:, perm]

    def grow(idx, depth):
        ys = y[idx]
        pos = ys.sum()
        if pos == 0 or pos == ys.size or idx.size < 2 or (max_depth is not None and depth >= max_depth):
            return _leaf(ys)
        gain, thr = split_gains(Xp[idx], ys)
        best = gain.max()
        if not np.isfinite(best):
            return _leaf(ys)
        cand = np.flatnonzero(gain.ravel() >= best - TIE_TOL)
        pick = cand[rng.integers(cand.size)] if cand.size > 1 else cand[0]
        i, j = divmod(int(pick), gain.shape[1])
        t = float(thr[i, j])
        go_left = Xp[idx, j] <= t
        node = TreeNode(feature=int(perm[j]), threshold=t, counts=(int(ys.size - pos), int(pos)))
        node.left = grow(idx[go_left], depth + 1)
        node.right = grow(idx[~go_left], depth + 1)
        return node

    return grow(np.arange(X.shape[0]), 0)


def tree_predict(node, X):
    X = np.asarray(X, dtype=np.float64)
    out = np.empty(X.shape[0], dtype=np.int64)
    for r, x in enumerate(X):
        n = node
        while not n.is_leaf:
            n = n.left if x[n.feature] <= n.threshold else n.right
        out[r] = n.label
    return out


# ---------------------------------------------------------------------------
# Linear models
# ---------------------------------------------------------------------------

@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    scale: np.ndarray
    history: list

    def decision_function(self, X):
        Z = (np.asarray(X, dtype=np.float64) - self.mean) / self.scale
        return Z @ self.weights + self.bias

    def predict(self, X):
        return (self.decision_function(X) >= 0).astype(np.int64)


def _standardizer(X, standardize):
    if not standardize:
        return np.zeros(X.shape[1]), np.ones(X.shape[1])
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale


def logistic_loss(w, b, Z, y, l2=0.0):
    """Mean logistic loss plus ``l2/2 * ||w||^2``."""
    z = Z @ w + b
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w))


def logistic_grad(w, b, Z, y, l2=0.0):
    z = Z @ w + b
    r = 0.5 * (1.0 + np.tanh(0.5 * z)) - y
    return Z.T @ r / len(y) + l2 * w, float(r.mean())


def fit_logistic_regression(X, y, lr=0.5, epochs=2000, l2=0.0, standardize=True):
    """Full-batch gradient descent from zero weights (deterministic)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mean, scale = _standardizer(X, standardize)
    Z = (X - mean) / scale
    w = np.zeros(X.shape[1])
    b = 0.0
    history = []
    for _ in range(epochs):
        gw, gb = logistic_grad(w, b, Z, y, l2)
        w -= lr * gw
        b -= lr * gb
        history.append(logistic_loss(w, b, Z, y, l2))
    return LinearModel(w, b, mean, scale, history)


def svm_objective(w, b, Z, ypm, C=1.0):
    """``0.5 ||w||^2 + C * mean(hinge)`` with labels in {-1, +1}."""
    return float(0.5 * (w @ w) + C * np.mean(np.maximum(0.0, 1.0 - ypm * (Z @ w + b))))


def fit_linear_svm(X, y, C=1.0, epochs=300, lr=0.5, standardize=True, max_halvings=30):
    """Primal subgradient descent on the hinge loss with an L2 penalty.

    Labels 0/1 are mapped to -1/+1. Step ``t`` starts at ``lr / sqrt(t + 1)``
    and is halved until the objective does not increase, so the recorded
    objective is non-increasing.
    """
    X = np.asarray(X, dtype=np.float64)
    ypm = np.where(np.asarray(y) > 0, 1.0, -1.0)
    mean, scale = _standardizer(X, standardize)
    Z = (X - mean) / scale
    w = np.zeros(X.shape[1])
    b = 0.0
    obj = svm_objective(w, b, Z, ypm, C)
    history = [obj]
    n = len(ypm)
    for t in range(epochs):
        active = ypm * (Z @ w + b) < 1.0
        gw = w - C * (Z[active].T @ ypm[active]) / n
        gb = -C * ypm[active].sum() / n
        step = lr / np.sqrt(t + 1.0)
        for _ in range(max_halvings):
            w_new, b_new = w - step * gw, b - step * gb
            new_obj = svm_objective(w_new, b_new, Z, ypm, C)
            if new_obj <= obj:
                w, b, obj = w_new, b_new, new_obj
                break
            step *= 0.5
        history.append(obj)
    return LinearModel(w, b, mean, scale, history)


# ---------------------------------------------------------------------------
# Comparison
# ---------------------------------------------------------------------------

def write_baseline_features(path, prepared):
    """Fused features (unigram counts + 32 PCA values) for both splits."""
    vocab_words = prepared.vocab.words
    header = (["sample_id", "split", "label"] + [f"u_{w}" for w in vocab_words]
              + [f"pca_{i}" for i in range(prepared.train.phys.shape[1])])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for part, fs in (("train", prepared.train), ("test", prepared.test)):
        fused = np.hstack([fs.counts, fs.phys])
        for sid, label, row in zip(fs.ids, fs.labels, fused):
            w.writerow([sid, part, int(label), *(format(float(v), ".17g") for v in row)])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_baseline_features(path):
    """Return ``{split: (ids, X, y)}`` from a fused feature file."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    out = {"train": ([], [], []), "test": ([], [], [])}
    for row in rows[1:]:
        ids, X, y = out[row[1]]
        ids.append(row[0])
        y.append(int(row[2]))
        X.append([float(v) for v in row[3:]])
    d = len(rows[0]) - 3
    return {k: (ids, np.array(X, dtype=np.float64).reshape(len(ids), d), np.array(y, dtype=np.int64))
            for k, (ids, X, y) in out.items()}


def run_baseline_comparison(prepared, split_path, out_dir, R_tree=200, base_seed=0,
                            bimodal_report=None, svm_C=1.0):
    """Fit the three baselines on one fused feature file and tabulate against the CNN.

    ``split_path`` must be the split file of the CNN experiment; its
    membership must match ``prepared``.
    """
    split_path = Path(split_path)
    if not split_path.exists():
        raise ConfigError(f"split file not found: {split_path}")
    sp = SplitIndex.load(split_path)
    if sp.train_ids != prepared.train.ids or sp.test_ids != prepared.test.ids:
        raise ConfigError(f"{split_path} does not match the prepared features")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    feat_path = out / "baseline_features.csv"
    write_baseline_features(feat_path, prepared)
    digest = sha256_file(feat_path)
    data = read_baseline_features(feat_path)
    _, Xtr, ytr = data["train"]
    _, Xte, yte = data["test"]

    descriptor = {"split_seed": sp.seed, "features_sha256": digest}
    seeds = [derive_seed(base_seed, r, 7) for r in range(R_tree)]
    votes = np.stack([tree_predict(fit_decision_tree(Xtr, ytr, seed=s), Xte) for s in seeds])
    reports = {
        "decision_tree": compute_metrics(majority_vote(votes), yte,
                                         {**descriptor, "model": "decision_tree", "runs": R_tree,
                                          "base_seed": base_seed}),
        "svm": compute_metrics(fit_linear_svm(Xtr, ytr, C=svm_C).predict(Xte), yte,
                               {**descriptor, "model": "svm", "runs": 1}),
        "logistic_regression": compute_metrics(fit_logistic_regression(Xtr, ytr).predict(Xte), yte,
                                               {**descriptor, "model": "logistic_regression",
                                                "runs": 1}),
    }
    if bimodal_report is not None:
        reports["bimodal_cnn"] = bimodal_report

    (out / "comparison.csv").write_text(comparison_csv(reports), encoding="utf-8")
    meta = {
        "features_file": feat_path.name,
        "features_sha256": digest,
        "linguistic_features": "unigram counts over the training vocabulary "
                               "(psycholinguistic lexicon features are not reproduced)",
        "physiological_features": "32 PCA components, identical to the CNN input",
        "reports": {k: json.loads(v.to_json()) for k, v in reports.items()},
    }
    (out / "comparison.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
    return reports


def comparison_csv(reports):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "overall", "deceptive_recall", "truthful_recall"])
    for name in COMPARISON_ROWS:
        if name in reports:
            r = reports[name]
            w.writerow([name, *("" if v is None else repr(float(v))
                                for v in (r.accuracy, r.deceptive_recall, r.truthful_recall))])
    return buf.getvalue()
