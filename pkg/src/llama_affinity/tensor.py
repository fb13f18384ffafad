"""Dense tensors with tape-free reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array.  Operations on tensors that require
gradients record their parents and a closure that pushes the output gradient
back to them; :func:`backward` walks that graph in reverse topological order.

Two precisions are used in practice: float32 for training and float64 for the
finite-difference checks in :func:`grad_check`.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from . import kernels

DTYPES = (np.float32, np.float64)
MASK_NEG = -1e9


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DegenerateInputError(ValueError):
    """Input is structurally valid but cannot be reduced (e.g. empty mask row)."""


def make_rng(seed) -> np.random.Generator:
    """Deterministic generator (PCG64 seeded through ``SeedSequence``).

    ``seed`` may be an int or a sequence of ints, e.g. ``(seed, fold)``.
    PCG64 streams are platform independent for a given seed.
    """
    return np.random.Generator(np.random.PCG64(seed))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other, self.dtype)))

    def __rsub__(self, other):
        return add(_lift(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        return backward(self)


def _lift(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float32))


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def _result(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _topo_order(root: Tensor):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict:
    """Reverse-mode pass from a scalar ``loss``.

    Returns a dict mapping every differentiable leaf reachable from ``loss`` to
    its gradient array; the same arrays are stored on ``leaf.grad``.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    order = _topo_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    leaves = {}
    for node in reversed(order):
        if node._backward is not None:
            if node.grad is not None:
                node._backward(node.grad)
            # free intermediate gradients eagerly
            node.grad = None
        else:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            leaves[node] = node.grad
    return leaves


def zero_grad(params):
    for p in params:
        p.grad = None


# elementwise and linear algebra

def add(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, a.dtype)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, a.dtype)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: _accumulate(a, -g))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return _result(a.data * c, (a,), lambda g: _accumulate(a, g * c))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, with numpy batch broadcasting."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _result(a.data @ b.data, (a, b), bw)


def reshape(a: Tensor, shape) -> Tensor:
    return _result(a.data.reshape(shape), (a,), lambda g: _accumulate(a, g.reshape(a.shape)))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _result(
        np.ascontiguousarray(a.data.transpose(axes)),
        (a,),
        lambda g: _accumulate(a, g.transpose(inv)),
    )


def sum(a: Tensor, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _result(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def take_rows(table: Tensor, ids) -> Tensor:
    """Embedding lookup: ``table[ids]`` for an integer array ``ids``."""
    ids = np.asarray(ids)

    def bw(g):
        if table.requires_grad:
            acc = np.zeros_like(table.data)
            np.add.at(acc, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
            _accumulate(table, acc)

    return _result(table.data[ids], (table,), bw)


def pick(a: Tensor, index) -> Tensor:
    """Select ``a[i, index[i]]`` for each row ``i`` of a 2-D tensor."""
    index = np.asarray(index)
    rows = np.arange(a.shape[0])

    def bw(g):
        acc = np.zeros_like(a.data)
        acc[rows, index] = g
        _accumulate(a, acc)

    return _result(a.data[rows, index], (a,), bw)


def repeat_heads(a: Tensor, repeats: int, axis: int = 1) -> Tensor:
    """Repeat each slice along ``axis`` ``repeats`` times (grouped-query KV sharing)."""
    if repeats == 1:
        return a

    def bw(g):
        shape = list(a.shape)
        shape.insert(axis + 1, repeats)
        _accumulate(a, g.reshape(shape).sum(axis=axis + 1))

    return _result(np.repeat(a.data, repeats, axis=axis), (a,), bw)


# nonlinearities (kernel backed)

def _rows(x):
    return np.ascontiguousarray(x.reshape(-1, x.shape[-1]))


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0
    return _result(a.data * keep, (a,), lambda g: _accumulate(a, g * keep))


def silu(a: Tensor) -> Tensor:
    x2 = _rows(a.data)
    y = kernels.silu_forward(x2).reshape(a.shape)
    return _result(
        y, (a,), lambda g: _accumulate(a, kernels.silu_backward(x2, _rows(g)).reshape(a.shape))
    )


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted for stability."""
    y2 = kernels.softmax_forward(_rows(a.data))

    def bw(g):
        _accumulate(a, kernels.softmax_backward(y2, _rows(g)).reshape(a.shape))

    return _result(y2.reshape(a.shape), (a,), bw)


def log_softmax(a: Tensor) -> Tensor:
    y2 = kernels.log_softmax_forward(_rows(a.data))

    def bw(g):
        _accumulate(a, kernels.log_softmax_backward(y2, _rows(g)).reshape(a.shape))

    return _result(y2.reshape(a.shape), (a,), bw)


def rms_norm(x: Tensor, gain: Tensor, eps: float) -> Tensor:
    """``x / sqrt(mean(x**2) + eps) * gain`` over the last axis."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if gain.shape != (x.shape[-1],):
        raise ShapeError(f"rms_norm: gain {gain.shape} does not match features of {x.shape}")
    x2 = _rows(x.data)
    g_arr = np.ascontiguousarray(gain.data, dtype=x.dtype)
    y2, inv = kernels.rms_norm_forward(x2, g_arr, float(eps))

    def bw(g):
        gx, gg = kernels.rms_norm_backward(x2, g_arr, inv, _rows(g))
        _accumulate(x, gx.reshape(x.shape))
        _accumulate(gain, gg)

    return _result(y2.reshape(x.shape), (x, gain), bw)


def masked_mean(x: Tensor, mask) -> Tensor:
    """Mean of ``x`` [B, T, H] over positions where ``mask`` [B, T] is 1."""
    mask = np.asarray(mask)
    if mask.shape != x.shape[:2]:
        raise ShapeError(f"masked_mean: mask {mask.shape} does not match {x.shape[:2]}")
    counts = mask.sum(axis=1)
    if np.any(counts == 0):
        raise DegenerateInputError("masked_mean: a mask row has no unmasked positions")
    m = mask.astype(x.dtype)[:, :, None]
    n = counts.astype(x.dtype)[:, None]
    out = (x.data * m).sum(axis=1) / n
    return _result(out, (x,), lambda g: _accumulate(x, (g / n)[:, None, :] * m))


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-p); identity at inference."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) * x.dtype.type(1.0 / (1.0 - p))
    return _result(x.data * keep, (x,), lambda g: _accumulate(x, g * keep))


def rope(x: Tensor, cos, sin) -> Tensor:
    """Rotate the feature halves of ``x`` [..., T, D] by per-position angles.

    ``cos`` and ``sin`` have shape [T, D/2].
    """
    d = x.shape[-1]
    if d % 2:
        raise ShapeError(f"rope needs an even feature dimension, got {d}")
    t = x.shape[-2]
    cos = np.ascontiguousarray(cos, dtype=x.dtype)
    sin = np.ascontiguousarray(sin, dtype=x.dtype)
    x3 = np.ascontiguousarray(x.data.reshape(-1, t, d))
    y = kernels.rope_forward(x3, cos, sin).reshape(x.shape)
    neg_sin = -sin

    def bw(g):
        g3 = np.ascontiguousarray(g.reshape(-1, t, d))
        _accumulate(x, kernels.rope_forward(g3, cos, neg_sin).reshape(x.shape))

    return _result(y, (x,), bw)


# verification

def grad_check(build: Callable[[], Tensor], leaf: Tensor, h: float = 1e-5,
               indices: Sequence[tuple] | None = None) -> float:
    """Max relative error between :func:`backward` and central differences.

    ``build`` must rebuild the scalar loss from scratch (deterministically) each
    call.  The relative error for a coordinate is
    ``|a - n| / max(|a|, |n|, 1e-8)``.  ``indices`` restricts the check to a
    subset of coordinates of ``leaf``.
    """
    zero_grad([leaf])
    loss = build()
    grads = backward(loss)
    analytic = grads.get(leaf)
    if analytic is None:
        analytic = np.zeros_like(leaf.data)
    analytic = analytic.copy()
    if indices is None:
        indices = list(np.ndindex(leaf.shape))
    worst = 0.0
    for idx in indices:
        orig = leaf.data[idx]
        leaf.data[idx] = orig + h
        fp = float(build().data)
        leaf.data[idx] = orig - h
        fm = float(build().data)
        leaf.data[idx] = orig
        numeric = (fp - fm) / (2 * h)
        a = float(analytic[idx])
        denom = max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, abs(a - numeric) / denom)
    return worst
