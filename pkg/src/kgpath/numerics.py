"""Dense double-precision tensors with a small reverse-mode tape.

Only the operations the path-reasoning model needs are provided. A node is
recorded only when at least one input requires a gradient, so inference code
can use the same functions without paying for graph construction.
"""
from __future__ import annotations

import math
import zlib
from typing import Callable, Iterable, Sequence

import numpy as np

Array = np.ndarray


class Tensor:
    __slots__ = ("data", "parents", "backward_fn", "name", "requires_grad")

    def __init__(self, data, parents: tuple = (), backward_fn=None, name: str | None = None,
                 requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name
        self.requires_grad = requires_grad or backward_fn is not None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, index): return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)


def parameter(data, name: str) -> Tensor:
    """Leaf tensor whose gradient is collected by :func:`backward`."""
    return Tensor(np.array(data, dtype=np.float64), name=name, requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, parents, backward_fn)
    return Tensor(data)


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _node(out, (x,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(v: Array) -> Array:
    # split by sign so neither branch overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _sigmoid(x.data)
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    return _node(np.log(x.data), (x,), lambda g: (g / x.data,))


# ---------------------------------------------------------------- structural

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    return _node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(out, (x,), back)


def getitem(x, index) -> Tensor:
    x = as_tensor(x)

    def back(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _node(x.data[index], (x,), back)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum(sizes)[:-1]
    return _node(np.concatenate([t.data for t in ts], axis=axis), tuple(ts),
                 lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _node(np.stack([t.data for t in ts], axis=axis), tuple(ts), back)


def take_along(x, idx: Array) -> Tensor:
    """out[b, j] = x[b, idx[b, j]] for 2-D ``x``; repeated indices accumulate."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    if x.data.ndim != 2 or idx.ndim != 2 or idx.shape[0] != x.shape[0]:
        raise ValueError(f"take_along shape mismatch: {x.shape} vs {idx.shape}")
    rows, width = x.shape

    def back(g):
        flat = (np.arange(rows)[:, None] * width + idx).ravel()
        return (np.bincount(flat, weights=g.ravel(), minlength=rows * width).reshape(rows, width),)

    return _node(np.take_along_axis(x.data, idx, axis=1), (x,), back)


# ---------------------------------------------------------------- normalizers

def softmax_array(v: Array, axis: int = -1) -> Array:
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("softmax of an empty vector")
    z = v - v.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    out = softmax_array(x.data, axis=axis)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (x,), back)


def log_softmax(x, mask: Array | None = None) -> Tensor:
    """Log-softmax over the last axis; ``mask`` False entries get -inf (probability 0)."""
    x = as_tensor(x)
    v = x.data
    if mask is None:
        mask = np.ones(v.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ValueError("every row needs at least one unmasked entry")
    shifted = np.where(mask, v, -np.inf)
    m = shifted.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(shifted - m), 0.0)
    lse = np.log(e.sum(axis=-1, keepdims=True)) + m
    out = np.where(mask, v - lse, -np.inf)
    probs = np.where(mask, np.exp(out), 0.0)

    def back(g):
        g = np.where(mask, g, 0.0)
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return _node(out, (x,), back)


def sigmoid_array(v) -> Array:
    return _sigmoid(np.atleast_1d(np.asarray(v, dtype=np.float64))).reshape(np.shape(v))


# ---------------------------------------------------------------- backward

def _topological(loss: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack_ = [(loss, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in reversed(node.parents):
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> dict[str, Array]:
    """Reverse-mode gradients of a scalar ``loss``.

    Returns a map from parameter name to gradient. Parameters listed in
    ``params`` that the loss does not touch get zero gradients.
    """
    if loss.data.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    out: dict[str, Array] = {}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            if node.name is not None:
                out[node.name] = out[node.name] + g if node.name in out else np.array(g)
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    for p in params or ():
        out.setdefault(p.name, np.zeros_like(p.data))
    return out


# ---------------------------------------------------------------- LSTM

def lstm_step(weights: dict, h_prev, c_prev, x):
    """One LSTM cell step, gate order (input, forget, output, candidate).

    ``weights["W"]`` has shape (input + hidden, 4 * hidden), ``weights["b"]``
    shape (4 * hidden,). Rows of ``x``, ``h_prev`` and ``c_prev`` are batch items.
    """
    W, b = as_tensor(weights["W"]), as_tensor(weights["b"])
    h_prev, c_prev, x = as_tensor(h_prev), as_tensor(c_prev), as_tensor(x)
    hidden = h_prev.shape[-1]
    if W.shape != (x.shape[-1] + hidden, 4 * hidden) or c_prev.shape != h_prev.shape:
        raise ValueError(f"lstm shapes: W{W.shape} x{x.shape} h{h_prev.shape} c{c_prev.shape}")
    z = matmul(concat([x, h_prev], axis=-1), W) + b
    i = sigmoid(z[:, :hidden])
    f = sigmoid(z[:, hidden:2 * hidden])
    o = sigmoid(z[:, 2 * hidden:3 * hidden])
    g = tanh(z[:, 3 * hidden:])
    c = f * c_prev + i * g
    h = o * tanh(c)
    return h, c


def init_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> Array:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------- randomness

def make_rng(seed: int, stream: str = "") -> np.random.Generator:
    """Named, independent stream derived from a root seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(stream.encode())]))


def sample_categorical(rng: np.random.Generator, probs) -> int:
    p = np.asarray(probs, dtype=np.float64)
    if (p < 0).any():
        raise ValueError("negative probability")
    if abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"probabilities sum to {p.sum()}")
    return int(sample_categorical_rows(rng, p[None, :])[0])


def sample_categorical_rows(rng: np.random.Generator, probs: Array) -> Array:
    """One draw per row by inverse CDF; zero-probability entries are never picked."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0])[:, None] * cdf[:, -1:]
    idx = (cdf <= u).sum(axis=1)
    # round-off can push past the last positive entry
    last = probs.shape[1] - 1 - np.argmax(probs[:, ::-1] > 0, axis=1)
    return np.minimum(idx, last)


def sample_bernoulli(rng: np.random.Generator, probs) -> Array:
    p = np.asarray(probs, dtype=np.float64)
    if ((p < 0) | (p > 1)).any():
        raise ValueError("Bernoulli probability outside [0, 1]")
    return (rng.random(p.shape) < p).astype(np.int64)


# ---------------------------------------------------------------- gradient check

def finite_difference_check(f: Callable[[dict], float], params: dict[str, Array],
                            grads: dict[str, Array], eps: float = 1e-5,
                            n_coords: int = 64, rng: np.random.Generator | None = None,
                            flat_tol: float = 1e-8, split: bool = False):
    """Max relative error between ``grads`` and central differences of ``f``.

    ``f`` receives a dict of arrays shaped like ``params``. Coordinates are
    sampled uniformly across all parameters (all of them if there are fewer
    than ``n_coords``). Where the analytic gradient is below ``flat_tol`` the
    absolute error is reported instead. With ``split`` the two are returned
    separately as ``(max relative error, max absolute error at flat coords)``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    coords = [(name, i) for name in sorted(params) for i in range(params[name].size)]
    if len(coords) > n_coords:
        pick = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]
    worst = worst_flat = 0.0
    for name, i in coords:
        base = params[name]
        plus = dict(params)
        minus = dict(params)
        p, m = base.copy(), base.copy()
        p.flat[i] += eps
        m.flat[i] -= eps
        plus[name], minus[name] = p, m
        numeric = (f(plus) - f(minus)) / (2.0 * eps)
        analytic = float(grads[name].flat[i])
        flat = abs(analytic) < flat_tol
        if flat:
            err = abs(numeric - analytic)
        else:
            err = abs(numeric - analytic) / max(abs(numeric), abs(analytic))
        if not np.isfinite(err):
            return (math.inf, math.inf) if split else math.inf
        if flat and split:
            worst_flat = max(worst_flat, err)
        else:
            worst = max(worst, err)
    return (worst, worst_flat) if split else worst


class Adam:
    """Adam over a dict of named arrays, updated in place."""

    def __init__(self, params: dict[str, Array], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, Array]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in sorted(self.params):
            g = grads.get(k)
            if g is None:
                continue
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            self.params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_global_norm(grads: dict[str, Array], max_norm: float) -> tuple[dict[str, Array], float]:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm
