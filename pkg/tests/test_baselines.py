import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bicnn import baselines, pipeline
from bicnn.baselines import (fit_decision_tree, fit_linear_svm, fit_logistic_regression,
                             logistic_grad, logistic_loss, split_gains, tree_predict)
from bicnn.errors import ConfigError, InsufficientDataError


def _brute_gains(X, y):
    """Every (feature, midpoint) split scored by direct counting."""
    def gini(labels):
        if not labels:
            return 0.0
        p = sum(labels) / len(labels)
        return 1 - p * p - (1 - p) ** 2

    out = {}
    n = len(y)
    for j in range(X.shape[1]):
        vals = sorted(set(X[:, j]))
        for a, b in zip(vals, vals[1:]):
            t = (a + b) / 2
            left = [y[i] for i in range(n) if X[i, j] <= t]
            right = [y[i] for i in range(n) if X[i, j] > t]
            out[(j, t)] = gini(list(y)) - (len(left) * gini(left) + len(right) * gini(right)) / n
    return out


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 50), d=st.integers(1, 4), seed=st.integers(0, 2**31))
def test_gini_matches_brute_force(n, d, seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 6, (n, d)).astype(float)
    y = rng.integers(0, 2, n)
    gain, thr = split_gains(X, y)
    brute = _brute_gains(X, y)
    fast = {}
    for i, j in zip(*np.nonzero(np.isfinite(gain))):
        fast[(j, thr[i, j])] = gain[i, j]
    assert set(fast) == set(brute)
    for k in brute:
        assert fast[k] == pytest.approx(brute[k], abs=1e-12)


def test_tree_xor():
    X = np.array([[0, 0], [1, 1], [0, 1], [1, 0.0]])
    y = np.array([0, 0, 1, 1])
    for seed in range(5):
        assert np.all(tree_predict(fit_decision_tree(X, y, seed=seed), X) == y)


def test_tree_single_class_is_leaf():
    t = fit_decision_tree(np.random.default_rng(0).normal(size=(6, 3)), np.ones(6, int))
    assert t.is_leaf and t.label == 1 and t.counts == (0, 6)


def test_tree_axis_separable():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(60, 3))
    y = (X[:, 0] >= 0).astype(int)
    t = fit_decision_tree(X, y, seed=0)
    assert t.depth() == 1 and t.feature == 0 and abs(t.threshold) < 0.5
    brute = _brute_gains(X, y)
    assert max(brute.values()) == pytest.approx(brute[(t.feature, t.threshold)])


def test_tree_training_consistency():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(120, 6))
    y = rng.integers(0, 2, 120)
    t = fit_decision_tree(X, y, seed=3)
    assert np.all(tree_predict(t, X) == y)


def test_tree_thresholds_are_midpoints():
    rng = np.random.default_rng(3)
    X = rng.integers(0, 10, (40, 3)).astype(float)
    y = rng.integers(0, 2, 40)
    stack = [(fit_decision_tree(X, y, seed=1), np.arange(40))]
    while stack:
        node, idx = stack.pop()
        if node.is_leaf:
            continue
        vals = np.unique(X[idx, node.feature])
        mids = (vals[1:] + vals[:-1]) / 2
        assert np.any(mids == node.threshold)
        go = X[idx, node.feature] <= node.threshold
        stack += [(node.left, idx[go]), (node.right, idx[~go])]


def test_tree_seed_changes_ties_only():
    X = np.array([[0, 0], [1, 1], [0, 1], [1, 0.0]])
    y = np.array([0, 0, 1, 1])
    roots = {fit_decision_tree(X, y, seed=s).feature for s in range(20)}
    assert roots == {0, 1}
    Xs = np.column_stack([np.arange(10.0), np.zeros(10)])
    ys = (np.arange(10) >= 5).astype(int)
    preds = np.stack([tree_predict(fit_decision_tree(Xs, ys, seed=s), Xs) for s in range(7)])
    np.testing.assert_array_equal(pipeline.majority_vote(preds), preds[0])


def test_tree_empty():
    with pytest.raises(InsufficientDataError):
        fit_decision_tree(np.zeros((0, 2)), np.zeros(0))


def _line():
    X = np.array([[-1.0], [-1.2], [-0.8], [1.0], [1.3], [0.9]])
    return X, np.array([0, 0, 0, 1, 1, 1])


def test_logistic_separable_and_all_zero():
    X, y = _line()
    assert np.all(fit_logistic_regression(X, y).predict(X) == y)
    m = fit_logistic_regression(X, np.zeros(6, int))
    assert np.all(m.decision_function(X) < 0)


def test_logistic_gradient_vanishes_at_fit():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 3))
    y = (X[:, 0] + 0.5 * rng.normal(size=40) > 0).astype(float)
    m = fit_logistic_regression(X, y, lr=0.5, epochs=3000, l2=0.1, standardize=False)
    eps = 1e-6
    theta = np.append(m.weights, m.bias)

    def f(th):
        return logistic_loss(th[:-1], th[-1], X, y, 0.1)

    num = np.array([(f(theta + eps * e) - f(theta - eps * e)) / (2 * eps) for e in np.eye(4)])
    assert np.linalg.norm(num) < 1e-3
    gw, gb = logistic_grad(m.weights, m.bias, X, y, 0.1)
    np.testing.assert_allclose(np.append(gw, gb), num, atol=1e-6)


def test_svm_examples():
    X, y = _line()
    m = fit_linear_svm(X, y)
    assert np.all(m.predict(X) == y) and m.weights[0] > 0
    sym = fit_linear_svm(np.array([[-1.0], [1.0]]), np.array([0, 1]))
    assert abs(sym.bias) < 1e-3
    rng = np.random.default_rng(4)
    Xr, yr = rng.normal(size=(50, 5)), rng.integers(0, 2, 50)
    h = fit_linear_svm(Xr, yr, epochs=200).history
    assert all(b <= a for a, b in zip(h, h[1:]))


def test_linear_models_deterministic():
    rng = np.random.default_rng(5)
    X, y = rng.normal(size=(30, 4)), rng.integers(0, 2, 30)
    for fit in (fit_linear_svm, fit_logistic_regression):
        a, b = fit(X, y), fit(X, y)
        assert a.weights.tobytes() == b.weights.tobytes() and a.bias == b.bias


@pytest.fixture(scope="module")
def comparison(mid_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("cmp")
    res = pipeline.run_experiments(mid_dataset, ("bimodal",), "both", R=4,
                                   config=pipeline.TrainConfig(epochs=30, lr=0.01), out_dir=out)
    reports = baselines.run_baseline_comparison(res.prepared, out / "split.txt", out, R_tree=9,
                                                bimodal_report=res.reports["bimodal"])
    return res, reports, out


def test_comparison_table(comparison):
    _, reports, out = comparison
    rows = list(csv.reader((out / "comparison.csv").open()))
    assert rows[0] == ["model", "overall", "deceptive_recall", "truthful_recall"]
    assert [r[0] for r in rows[1:]] == ["decision_tree", "svm", "logistic_regression", "bimodal_cnn"]
    for name in baselines.BASELINE_MODELS:
        assert reports[name].accuracy > 0.5


def test_baseline_features_match_cnn_inputs(comparison):
    res, _, out = comparison
    data = baselines.read_baseline_features(out / "baseline_features.csv")
    ids, X, y = data["train"]
    assert ids == res.prepared.train.ids
    np.testing.assert_array_equal(X[:, -32:], res.prepared.train.phys)
    np.testing.assert_array_equal(X[:, :-32], res.prepared.train.counts)
    np.testing.assert_array_equal(y, res.prepared.train.labels)
    meta = (out / "comparison.json").read_text()
    assert pipeline.sha256_file(out / "baseline_features.csv") in meta
    assert "unigram" in meta


def test_comparison_requires_split(comparison, tmp_path):
    res, _, _ = comparison
    with pytest.raises(ConfigError):
        baselines.run_baseline_comparison(res.prepared, tmp_path / "missing.txt", tmp_path)
