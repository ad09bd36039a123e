import numpy as np
import pytest

from bicnn import dataio


def naive_conv1d(x, filters, biases):
    K, w = filters.shape
    L = len(x)
    out = np.zeros((K, L - w + 1))
    for k in range(K):
        for i in range(L - w + 1):
            acc = biases[k]
            for j in range(w):
                acc += filters[k, j] * x[i + j]
            out[k, i] = acc
    return out


def naive_conv2d(x, filters, biases):
    K, s, _ = filters.shape
    H, W = x.shape
    out = np.zeros((K, H - s + 1, W - s + 1))
    for k in range(K):
        for i in range(H - s + 1):
            for j in range(W - s + 1):
                acc = biases[k]
                for a in range(s):
                    for b in range(s):
                        acc += filters[k, a, b] * x[i + a, j + b]
                out[k, i, j] = acc
    return out


def naive_forward(net, x, g=0):
    """Per-sample nested-loop forward of replica ``g`` of a unimodal network."""
    p = {n: v[g] for n, v in net.params.items()}
    feats = []
    for bank in net.banks:
        W, b = p[f"{bank.name}.weight"], p[f"{bank.name}.bias"]
        fm = naive_conv1d(x, W, b) if bank.ndim == 1 else naive_conv2d(x, W, b)
        for k in range(fm.shape[0]):
            feats.append(max(0.0, fm[k].max()))
    feats = np.array(feats) if net.banks else np.asarray(x, dtype=float)
    W, b = p[f"{net.head.name}.weight"], p[f"{net.head.name}.bias"]
    return np.array([sum(W[o, i] * feats[i] for i in range(len(feats))) + b[o]
                     for o in range(W.shape[0])])


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Ten subjects (40 samples), short transcripts, strong planted signal."""
    root = tmp_path_factory.mktemp("ds_small")
    cfg = dataio.GeneratorConfig(n_subjects=10, seed=3, min_tokens=10, max_tokens=20)
    dataio.generate_dataset(cfg, root)
    return dataio.load_dataset(root)


@pytest.fixture(scope="session")
def mid_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds_mid")
    cfg = dataio.GeneratorConfig(n_subjects=30, seed=5, min_tokens=10, max_tokens=20)
    dataio.generate_dataset(cfg, root)
    return dataio.load_dataset(root)


# Acceptance criteria append "(number, passed, detail)" here; printed at the end of the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
