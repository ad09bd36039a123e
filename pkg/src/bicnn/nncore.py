"""Minimal dense-array neural network core.

Everything is float64 numpy. Network parameters carry a leading *replica*
axis ``G``: a network with ``G`` replicas is ``G`` independently initialised
copies of the same architecture trained in lockstep on the same data. Each
replica's loss and gradients only involve its own parameters, so a replica's
trajectory is the same as if it were trained alone. ``G == 1`` is an ordinary
single network.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GeometryError, LabelError, MissingCacheError

# Target element count of one convolution work block (keeps it in cache).
_BLOCK_ELEMS = 1 << 18


# ---------------------------------------------------------------------------
# Single-sample functional ops
# ---------------------------------------------------------------------------

def conv1d_forward(x, filters, biases):
    """Valid 1-D cross-correlation of ``x`` (L,) with ``filters`` (K, w).

    Returns an array of shape (K, L - w + 1).
    """
    x = np.asarray(x, dtype=np.float64)
    filters = np.asarray(filters, dtype=np.float64)
    biases = np.asarray(biases, dtype=np.float64)
    if x.ndim != 1 or filters.ndim != 2 or biases.shape != filters.shape[:1]:
        raise GeometryError(
            f"conv1d expects x (L,), filters (K, w), biases (K,); got "
            f"{x.shape}, {filters.shape}, {biases.shape}")
    L, w = x.shape[0], filters.shape[1]
    if w < 1 or L < w:
        raise GeometryError(f"conv1d: input length L={L} is shorter than kernel width w={w}")
    windows = sliding_window_view(x, w)
    return filters @ windows.T + biases[:, None]


def conv2d_forward(x, filters, biases):
    """Valid 2-D cross-correlation of ``x`` (H, W) with square ``filters`` (K, s, s)."""
    x = np.asarray(x, dtype=np.float64)
    filters = np.asarray(filters, dtype=np.float64)
    biases = np.asarray(biases, dtype=np.float64)
    if (x.ndim != 2 or filters.ndim != 3 or filters.shape[1] != filters.shape[2]
            or biases.shape != filters.shape[:1]):
        raise GeometryError(
            f"conv2d expects x (H, W), filters (K, s, s), biases (K,); got "
            f"{x.shape}, {filters.shape}, {biases.shape}")
    (H, W), s = x.shape, filters.shape[1]
    if s < 1 or H < s or W < s:
        raise GeometryError(f"conv2d: input {H}x{W} is smaller than kernel side s={s}")
    windows = sliding_window_view(x, (s, s))
    return np.einsum("kab,ijab->kij", filters, windows) + biases[:, None, None]


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def global_max_pool(feature_map):
    """Return ``(max value, flat index of its first occurrence)``."""
    flat = np.ravel(np.asarray(feature_map, dtype=np.float64))
    if flat.size == 0:
        raise GeometryError("global_max_pool: empty feature map")
    idx = int(np.argmax(flat))
    return float(flat[idx]), idx


def dense_forward(x, W, b):
    x = np.asarray(x, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if x.ndim != 1 or W.ndim != 2 or W.shape[1] != x.shape[0] or b.shape != (W.shape[0],):
        raise GeometryError(
            f"dense: shapes do not conform: x {x.shape}, W {W.shape}, b {b.shape}")
    return W @ x + b


def softmax_cross_entropy(logits, label):
    """Stabilised softmax cross-entropy for one sample.

    Returns ``(loss, grad)`` where ``grad = softmax(logits) - onehot(label)``.
    """
    z = np.asarray(logits, dtype=np.float64)
    C = z.shape[0]
    if not 0 <= int(label) < C or int(label) != label:
        raise LabelError(f"label {label!r} outside [0, {C})")
    z = z - z.max()
    lse = np.log(np.exp(z).sum())
    p = np.exp(z - lse)
    grad = p.copy()
    grad[int(label)] -= 1.0
    return float(lse - z[int(label)]), grad


def cross_entropy_batch(logits, labels):
    """Mean softmax cross-entropy per replica.

    ``logits`` is (G, N, C) and ``labels`` (N,). Returns per-replica losses
    (G,) and the gradient of each replica's mean loss w.r.t. its logits.
    """
    labels = np.asarray(labels)
    G, N, C = logits.shape
    if labels.shape != (N,):
        raise GeometryError(f"labels shape {labels.shape} does not match {N} samples")
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise LabelError(f"labels must lie in [0, {C})")
    z = logits - logits.max(axis=2, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=2, keepdims=True))
    logp = z - lse
    rows = np.arange(N)
    losses = -logp[:, rows, labels].mean(axis=1)
    grad = np.exp(logp)
    grad[:, rows, labels] -= 1.0
    grad /= N
    return losses, grad


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

class ConvBank:
    """Convolution -> ReLU -> global max pool over one filter size.

    Takes the network input shared by all replicas, (N, L) for ``ndim=1`` or
    (N, H, W) for ``ndim=2``, and returns pooled features (G, N, K). Because
    ReLU is monotone, ``max(relu(z)) == relu(max(z))`` and the first argmax is
    the same, so pooling happens before the activation. The backward pass
    routes each pooled gradient to its argmax window only, masked where the
    pooled pre-activation is <= 0.
    """

    def __init__(self, name, size, n_filters, ndim):
        if ndim not in (1, 2):
            raise ValueError("ndim must be 1 or 2")
        self.name = name
        self.size = int(size)
        self.n_filters = int(n_filters)
        self.ndim = ndim
        self.window = self.size ** ndim
        self._src = None
        self._patches = None
        self._cache = None

    @property
    def param_shapes(self):
        kernel = (self.size,) * self.ndim
        return {f"{self.name}.weight": (self.n_filters, *kernel),
                f"{self.name}.bias": (self.n_filters,)}

    @property
    def fan_in(self):
        return self.window

    def patches(self, x):
        """Sliding windows of ``x`` laid out as (D, N, P), D = window size."""
        x = np.asarray(x, dtype=np.float64)
        s = self.size
        if x.ndim != self.ndim + 1:
            raise GeometryError(
                f"{self.name}: expected a batch of {self.ndim}-D inputs, got shape {x.shape}")
        if self.ndim == 1:
            L = x.shape[1]
            if L < s:
                raise GeometryError(f"{self.name}: input length L={L} is shorter than kernel width w={s}")
            win = sliding_window_view(x, s, axis=1)
        else:
            H, W = x.shape[1:]
            if H < s or W < s:
                raise GeometryError(f"{self.name}: input {H}x{W} is smaller than kernel side s={s}")
            win = sliding_window_view(x, (s, s), axis=(1, 2))
        N = x.shape[0]
        return np.ascontiguousarray(win.reshape(N, -1, self.window).transpose(2, 0, 1))

    def _get_patches(self, x):
        if x is not self._src:
            self._patches = self.patches(x)
            self._src = x
        return self._patches

    def forward(self, x, params):
        p = self._get_patches(x)
        D, N, P = p.shape
        weight = params[f"{self.name}.weight"]
        bias = params[f"{self.name}.bias"]
        G, K = weight.shape[:2]
        w2 = weight.reshape(G * K, D)
        idx = np.empty((G * K, N), dtype=np.intp)
        zmax = np.empty((G * K, N))
        step = max(1, _BLOCK_ELEMS // max(1, G * K * P))
        for lo in range(0, N, step):
            hi = min(N, lo + step)
            z = (w2 @ p[:, lo:hi].reshape(D, -1)).reshape(G * K, hi - lo, P)
            i = z.argmax(axis=2)
            idx[:, lo:hi] = i
            zmax[:, lo:hi] = np.take_along_axis(z, i[..., None], axis=2)[..., 0]
        pre = zmax.reshape(G, K, N).transpose(0, 2, 1) + bias[:, None, :]
        self._cache = (idx, pre, p)
        return np.maximum(pre, 0.0)

    def backward(self, grad_out, grads):
        if self._cache is None:
            raise MissingCacheError(f"{self.name}: backward called before forward")
        idx, pre, p = self._cache
        D, N, P = p.shape
        G, _, K = pre.shape
        g = grad_out * (pre > 0)
        grads[f"{self.name}.bias"] += g.sum(axis=1)
        gk = g.transpose(0, 2, 1).reshape(G * K, N)
        flat = idx + (np.arange(N) * P)[None, :]
        chosen = p.reshape(D, N * P)[:, flat]
        dw = np.einsum("dkn,kn->kd", chosen, gk)
        grads[f"{self.name}.weight"] += dw.reshape(grads[f"{self.name}.weight"].shape)


class Dense:
    """Fully connected layer ``y = W x + b``.

    Input is either shared by all replicas, (N, d), or per replica, (G, N, d).
    """

    def __init__(self, name, n_in, n_out):
        self.name = name
        self.n_in = int(n_in)
        self.n_out = int(n_out)
        self._x = None

    @property
    def param_shapes(self):
        return {f"{self.name}.weight": (self.n_out, self.n_in),
                f"{self.name}.bias": (self.n_out,)}

    @property
    def fan_in(self):
        return self.n_in

    def forward(self, x, params):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_in or x.ndim not in (2, 3):
            raise GeometryError(f"{self.name}: expected (..., {self.n_in}) input, got {x.shape}")
        W = params[f"{self.name}.weight"]
        b = params[f"{self.name}.bias"]
        if x.ndim == 3 and x.shape[0] != W.shape[0]:
            raise GeometryError(f"{self.name}: {x.shape[0]} input replicas vs {W.shape[0]} parameter replicas")
        self._x = x
        return np.matmul(x, W.transpose(0, 2, 1)) + b[:, None, :]

    def backward(self, grad_out, grads, params):
        if self._x is None:
            raise MissingCacheError(f"{self.name}: backward called before forward")
        x = self._x
        grads[f"{self.name}.weight"] += np.matmul(grad_out.transpose(0, 2, 1), x)
        grads[f"{self.name}.bias"] += grad_out.sum(axis=1)
        return np.matmul(grad_out, params[f"{self.name}.weight"])


# ---------------------------------------------------------------------------
# Network container
# ---------------------------------------------------------------------------

class Network:
    """Parallel conv banks whose pooled outputs are concatenated into a dense head.

    With no banks the head is applied to the input directly.
    """

    def __init__(self, banks, head, n_replicas=1):
        self.banks = list(banks)
        self.head = head
        self.n_replicas = int(n_replicas)
        self.layers = self.banks + [head]
        self.param_shapes = {}
        self.fan_in = {}
        for layer in self.layers:
            for name, shape in layer.param_shapes.items():
                if name in self.param_shapes:
                    raise ValueError(f"duplicate parameter name {name!r}")
                self.param_shapes[name] = shape
                self.fan_in[name] = layer.fan_in
        G = self.n_replicas
        self.params = {n: np.zeros((G, *s)) for n, s in self.param_shapes.items()}
        self.grads = {n: np.zeros((G, *s)) for n, s in self.param_shapes.items()}
        self._forward_done = False

    def initialize(self, seeds):
        """Fan-in scaled uniform weights and zero biases, one seed per replica.

        Replica ``g`` draws from ``default_rng(seeds[g])`` in parameter order,
        so its values do not depend on the other replicas.
        """
        seeds = list(seeds)
        if len(seeds) != self.n_replicas:
            raise ValueError(f"need {self.n_replicas} seeds, got {len(seeds)}")
        for g, seed in enumerate(seeds):
            rng = np.random.default_rng(seed)
            for name, shape in self.param_shapes.items():
                if name.endswith(".bias"):
                    self.params[name][g] = 0.0
                else:
                    bound = 1.0 / np.sqrt(self.fan_in[name])
                    self.params[name][g] = rng.uniform(-bound, bound, size=shape)
        return self

    def forward(self, x):
        if self.banks:
            feats = np.concatenate([b.forward(x, self.params) for b in self.banks], axis=-1)
        else:
            feats = x
        out = self.head.forward(feats, self.params)
        self._forward_done = True
        return out

    def backward(self, grad_logits):
        """Accumulate parameter gradients into ``self.grads``."""
        if not self._forward_done:
            raise MissingCacheError("backward called before forward")
        gfeat = self.head.backward(grad_logits, self.grads, self.params)
        start = 0
        for bank in self.banks:
            stop = start + bank.n_filters
            bank.backward(gfeat[..., start:stop], self.grads)
            start = stop
        return self.grads

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def loss_and_grad(self, x, labels):
        """Per-replica mean cross-entropy; gradients left in ``self.grads``."""
        self.zero_grad()
        losses, dlogits = cross_entropy_batch(self.forward(x), labels)
        self.backward(dlogits)
        return losses

    def loss(self, x, labels):
        return cross_entropy_batch(self.forward(x), labels)[0]

    def n_parameters(self):
        """Parameter count of a single replica."""
        return int(sum(np.prod(s) for s in self.param_shapes.values()))

    def replica(self, g):
        """A single-replica copy of replica ``g``."""
        net = self.clone(n_replicas=1)
        for name in self.params:
            net.params[name][0] = self.params[name][g]
        return net

    def clone(self, n_replicas=None):
        import copy
        banks = [copy.copy(b) for b in self.banks]
        for b in banks:
            b._src = b._patches = b._cache = None
        head = copy.copy(self.head)
        head._x = None
        net = Network(banks, head, self.n_replicas if n_replicas is None else n_replicas)
        net.spec = getattr(self, "spec", None)
        if n_replicas is None:
            for name in self.params:
                net.params[name][...] = self.params[name]
        return net

    def checksum(self):
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name]).tobytes())
        return h.hexdigest()


def backward(net, grad_logits):
    """Backpropagate ``grad_logits`` through ``net``; returns the gradient dict."""
    return net.backward(grad_logits)


# ---------------------------------------------------------------------------
# Optimiser
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        return state


def optimizer_step(params, grads, state):
    """Bias-corrected Adam update in place; gradients are zeroed afterwards."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        g.fill(0.0)
    return params, state


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------

def grad_check(net, x, labels, eps=1e-5):
    """Worst relative error between backprop and central differences.

    The loss is the sum over replicas of each replica's mean cross-entropy.
    Relative error uses the denominator ``max(|analytic|, |numeric|, 1e-8)``.
    """
    net.loss_and_grad(x, labels)
    analytic = {n: g.copy() for n, g in net.grads.items()}
    worst = 0.0
    for name, p in net.params.items():
        flat = p.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = net.loss(x, labels).sum()
            flat[i] = orig - eps
            down = net.loss(x, labels).sum()
            flat[i] = orig
            num = (up - down) / (2.0 * eps)
            a = a_flat[i]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    net.zero_grad()
    return worst


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, params, spec=None):
    """Write parameters as a JSON text document with 17-significant-digit values."""
    doc = {
        "spec": spec,
        "params": {
            name: {"shape": list(np.shape(v)),
                   "values": [format(float(x), ".17g") for x in np.ravel(v)]}
            for name, v in sorted(params.items())
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path):
    """Return ``(params, spec)`` from a file written by :func:`save_checkpoint`."""
    doc = json.loads(Path(path).read_text())
    params = {
        name: np.array([float(s) for s in entry["values"]], dtype=np.float64).reshape(entry["shape"])
        for name, entry in doc["params"].items()
    }
    return params, doc.get("spec")
