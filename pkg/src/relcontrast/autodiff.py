"""A small float64 tensor engine with reverse-mode differentiation.

Operations record themselves when any input requires a gradient and
recording is enabled (see :func:`no_grad`). Every recorded tensor carries a
creation counter; sorting the reachable records by decreasing counter gives
a reverse topological order, which is what :func:`backward` replays. The
record list is rebuilt on every forward pass.

Broadcasting is deliberately narrow. ``add`` accepts a 1-D bias against a
2-D input and a scalar against anything; ``scale_rows`` multiplies each row
by a constant. Everything else requires matching shapes.
"""
from __future__ import annotations

import itertools
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DetachedOutput, NotScalar, ShapeMismatch

_recording = True
_counter = itertools.count()


@contextmanager
def no_grad():
    global _recording
    prev, _recording = _recording, False
    try:
        yield
    finally:
        _recording = prev


def is_recording() -> bool:
    return _recording


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward", "_order")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self._order = next(_counter)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    @property
    def T(self):
        return transpose(self)


class Parameter(Tensor):
    __slots__ = ("name", "trainable")

    def __init__(self, name: str, data, trainable: bool = True):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=trainable)
        self.name = name
        self.trainable = trainable

    def set_trainable(self, flag: bool) -> None:
        self.trainable = flag
        self.requires_grad = flag

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents: tuple, backward: Callable) -> Tensor:
    out = Tensor(data)
    if _recording and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _need_2d(name, *ts):
    for t in ts:
        if t.ndim != 2:
            raise ShapeMismatch(f"{name}: expected 2-D input, got shape {t.shape}")


# --- elementwise and linear algebra ---------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _need_2d("matmul", a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), bw)


def sparse_matmul(s: sp.spmatrix, w) -> Tensor:
    """Constant sparse matrix times a dense tensor."""
    w = as_tensor(w)
    _need_2d("sparse_matmul", w)
    if s.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"sparse_matmul: {s.shape} @ {w.shape}")
    s = sp.csr_matrix(s)

    def bw(g):
        return (np.asarray(s.T @ g),)

    return _result(np.asarray(s @ w.data), (w,), bw)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _result(a.data + b.data, (a, b), lambda g: (g, g))
    if a.ndim == 2 and b.ndim == 1 and b.shape[0] == a.shape[1]:
        return _result(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)))
    if b.ndim == 0:
        return _result(a.data + b.data, (a, b), lambda g: (g, g.sum()))
    raise ShapeMismatch(f"add: {a.shape} + {b.shape}")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"sub: {a.shape} - {b.shape}")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul: {a.shape} * {b.shape}")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def scale_rows(a, c) -> Tensor:
    """Multiply row ``i`` of ``a`` by the constant ``c[i]``."""
    a = as_tensor(a)
    c = np.asarray(c, dtype=np.float64)
    if a.ndim < 1 or c.shape != (a.shape[0],):
        raise ShapeMismatch(f"scale_rows: {a.shape} with factors {c.shape}")
    cb = c.reshape((-1,) + (1,) * (a.ndim - 1))
    return _result(a.data * cb, (a,), lambda g: (g * cb,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


# --- shape manipulation ---------------------------------------------------

def transpose(a) -> Tensor:
    a = as_tensor(a)
    _need_2d("transpose", a)
    return _result(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(f"reshape: {a.shape} -> {shape}") from exc
    old = a.shape
    return _result(data, (a,), lambda g: (g.reshape(old),))


def concat(ts: Sequence, axis: int = 1) -> Tensor:
    ts = [as_tensor(t) for t in ts]
    if not ts:
        raise ShapeMismatch("concat: no inputs")
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {[t.shape for t in ts]} along {axis}") from exc
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(ts)))

    return _result(data, tuple(ts), bw)


def stack(ts: Sequence, axis: int = 1) -> Tensor:
    ts = [as_tensor(t) for t in ts]
    shapes = {t.shape for t in ts}
    if len(shapes) != 1:
        raise ShapeMismatch(f"stack: mismatched shapes {sorted(shapes)}")
    data = np.stack([t.data for t in ts], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _result(data, tuple(ts), bw)


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    _need_2d("slice_cols", a)
    width = a.shape[1]

    def bw(g):
        full = np.zeros((g.shape[0], width))
        full[:, start:stop] = g
        return (full,)

    return _result(a.data[:, start:stop], (a,), bw)


def take_rows(a, idx) -> Tensor:
    """Gather rows (repeats allowed). Also serves as embedding lookup."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeMismatch(f"take_rows: index must be 1-D, got {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeMismatch(f"take_rows: index out of range for {a.shape[0]} rows")

    def bw(g):
        full = np.zeros(a.shape)
        np.add.at(full, idx, g)
        return (full,)

    return _result(a.data[idx], (a,), bw)


embedding_lookup = take_rows


def take(a, rows, cols) -> Tensor:
    """Pick ``a[rows[i], cols[i]]`` into a 1-D tensor."""
    a = as_tensor(a)
    _need_2d("take", a)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if rows.shape != cols.shape or rows.ndim != 1:
        raise ShapeMismatch(f"take: index shapes {rows.shape} and {cols.shape}")

    def bw(g):
        full = np.zeros(a.shape)
        np.add.at(full, (rows, cols), g)
        return (full,)

    return _result(a.data[rows, cols], (a,), bw)


# --- reductions -----------------------------------------------------------

def total(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _result(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    shape = a.shape
    return _result(np.asarray(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),))


def dot_const(a, w) -> Tensor:
    """Scalar ``sum(a * w)`` for a constant weight array ``w``."""
    a = as_tensor(a)
    w = np.asarray(w, dtype=np.float64)
    if w.shape != a.shape:
        raise ShapeMismatch(f"dot_const: {a.shape} vs {w.shape}")
    return _result(np.asarray(np.dot(a.data.ravel(), w.ravel())), (a,), lambda g: (g * w,))


def sum_rows(a) -> Tensor:
    a = as_tensor(a)
    _need_2d("sum_rows", a)
    n = a.shape[0]
    return _result(a.data.sum(axis=0), (a,), lambda g: (np.tile(g, (n, 1)),))


def mean_rows(a) -> Tensor:
    a = as_tensor(a)
    _need_2d("mean_rows", a)
    n = a.shape[0]
    if n == 0:
        raise ShapeMismatch("mean_rows: empty input")
    return _result(a.data.mean(axis=0), (a,), lambda g: (np.tile(g / n, (n, 1)),))


def segment_sum(a, segments, num_segments: int) -> Tensor:
    """``out[s] = sum of a[i] over i with segments[i] == s`` (rows of a 1-D or 2-D input)."""
    a = as_tensor(a)
    segments = np.asarray(segments, dtype=np.int64)
    if segments.shape != (a.shape[0],):
        raise ShapeMismatch(f"segment_sum: {segments.shape} segment ids for {a.shape}")
    out = np.zeros((num_segments,) + a.shape[1:])
    np.add.at(out, segments, a.data)
    return _result(out, (a,), lambda g: (g[segments],))


def logsumexp_rows(a) -> Tensor:
    a = as_tensor(a)
    _need_2d("logsumexp_rows", a)
    m = a.data.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(a.data - m).sum(axis=1, keepdims=True)))[:, 0]

    def bw(g):
        return (np.exp(a.data - lse[:, None]) * g[:, None],)

    return _result(lse, (a,), bw)


def segment_logsumexp(x, segments, num_segments: int) -> Tensor:
    """Per-segment log-sum-exp of a 1-D tensor; every segment must be non-empty."""
    x = as_tensor(x)
    segments = np.asarray(segments, dtype=np.int64)
    if x.ndim != 1 or segments.shape != x.shape:
        raise ShapeMismatch(f"segment_logsumexp: values {x.shape}, segments {segments.shape}")
    m = np.full(num_segments, -np.inf)
    np.maximum.at(m, segments, x.data)
    if not np.all(np.isfinite(m)):
        raise ShapeMismatch("segment_logsumexp: empty segment")
    s = np.zeros(num_segments)
    np.add.at(s, segments, np.exp(x.data - m[segments]))
    lse = m + np.log(s)

    def bw(g):
        return (np.exp(x.data - lse[segments]) * g[segments],)

    return _result(lse, (x,), bw)


# --- losses ---------------------------------------------------------------

def softmax_cross_entropy(logits, targets) -> Tensor:
    logits = as_tensor(logits)
    _need_2d("softmax_cross_entropy", logits)
    targets = np.asarray(targets, dtype=np.int64)
    n = logits.shape[0]
    if targets.shape != (n,):
        raise ShapeMismatch(f"softmax_cross_entropy: {n} rows, targets {targets.shape}")
    x = logits.data
    m = x.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=1))
    loss = np.mean(lse - x[np.arange(n), targets])

    def bw(g):
        p = np.exp(x - lse[:, None])
        p[np.arange(n), targets] -= 1.0
        return (p * (float(g) / n),)

    return _result(np.asarray(loss), (logits,), bw)


def mse(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def bw(g):
        d = diff * (2.0 * float(g) / n)
        return d, -d

    return _result(np.asarray(np.mean(diff ** 2)), (pred, target), bw)


def bce_with_logits(logits, targets) -> Tensor:
    """Mean binary cross-entropy computed from logits without forming log(sigmoid)."""
    logits = as_tensor(logits)
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.shape:
        raise ShapeMismatch(f"bce_with_logits: {logits.shape} vs {y.shape}")
    x = logits.data
    loss = np.mean(np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x))))
    n = x.size

    def bw(g):
        p = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        return ((p - y) * (float(g) / n),)

    return _result(np.asarray(loss), (logits,), bw)


# --- batch normalization --------------------------------------------------

@dataclass
class BatchNormStats:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, dim: int) -> "BatchNormStats":
        return cls(np.zeros(dim), np.ones(dim))


def batch_norm_1d(x, gamma, beta, stats: BatchNormStats, training: bool) -> Tensor:
    """Batch normalization over rows.

    Running variance tracks the biased batch variance, so training and
    inference agree exactly when the running statistics equal the batch's.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    _need_2d("batch_norm_1d", x)
    d = x.shape[1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeMismatch(f"batch_norm_1d: input {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    if training:
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        if x.shape[0] > 0:
            m = stats.momentum
            stats.running_mean = (1 - m) * stats.running_mean + m * mu
            stats.running_var = (1 - m) * stats.running_var + m * var
    else:
        mu, var = stats.running_mean, stats.running_var
    inv_std = 1.0 / np.sqrt(var + stats.eps)
    xhat = (x.data - mu) * inv_std
    out = xhat * gamma.data + beta.data
    n = x.shape[0]

    def bw(g):
        dxhat = g * gamma.data
        if training:
            dx = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dx = dxhat * inv_std
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _result(out, (x, gamma, beta), bw)


# --- differentiation ------------------------------------------------------

def backward(output: Tensor, params: Iterable[Parameter]) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``output`` for each parameter, keyed by name.

    Parameters that ``output`` does not depend on get zero gradients.
    """
    params = list(params)
    if output.data.size != 1:
        raise NotScalar(f"backward needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        raise DetachedOutput("output was not recorded; nothing to differentiate")

    nodes = []
    seen = {id(output)}
    stack = [output]
    while stack:
        t = stack.pop()
        if t._backward is not None:
            nodes.append(t)
            for p in t._parents:
                if p.requires_grad and id(p) not in seen:
                    seen.add(id(p))
                    stack.append(p)
    nodes.sort(key=lambda t: t._order, reverse=True)

    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    for t in nodes:
        g = grads.pop(id(t), None)
        if g is None:
            continue
        for p, pg in zip(t._parents, t._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.array(pg, dtype=np.float64)
    return {p.name: grads.get(id(p), np.zeros_like(p.data)) for p in params}


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Parameter],
    eps: float = 1e-5,
    max_coords: int = 24,
    rng: np.random.Generator | None = None,
) -> float:
    """Largest ``|analytic - central difference| / max(1, |analytic|)`` over sampled coordinates.

    ``f`` must rebuild its output from the current parameter values on each call.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    analytic = backward(f(), params)
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                hi = f().item()
                flat[i] = orig - eps
                lo = f().item()
            flat[i] = orig
            numeric = (hi - lo) / (2 * eps)
            a = analytic[p.name].reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst


# --- optimizer ------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Parameter], grads: dict[str, np.ndarray], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, applied in place to trainable parameters."""
    for p in params:
        g = grads.get(p.name)
        if g is not None and g.shape != p.shape:
            raise ShapeMismatch(f"adam_step: gradient {g.shape} for {p.name} {p.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p in params:
        if not p.trainable:
            continue
        g = grads.get(p.name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(p.name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            v = state.v[p.name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[p.name] = m
        state.v[p.name] = v
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))
