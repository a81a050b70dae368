"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps an ndarray and remembers the operation that produced it,
so calling :meth:`Tensor.backward` on a scalar loss walks the tape and
accumulates gradients into every reachable leaf created with
``requires_grad=True``.  Only the operations the models in this package need
are implemented; each backward rule is hand-written and is what the
finite-difference harness in :mod:`pointview.gradcheck` verifies.

Gradients are computed in whatever dtype the data carries.  Use float64
tensors when comparing against finite differences and float32 for training.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "add", "sub", "mul", "div", "neg", "pow_", "matmul",
    "sum_", "mean_", "max_reduce",
    "exp", "log", "sigmoid", "relu", "leaky_relu",
    "reshape", "transpose_", "concat", "gather_rows", "dropout",
    "softmax", "log_softmax",
    "margin_recorder",
]

# --------------------------------------------------------------------------
# kink margins
#
# relu / leaky-relu / max-style ops are piecewise; a finite-difference probe
# that straddles one of their kinks produces garbage that has nothing to do
# with the correctness of the analytic gradient.  When a ``margin_recorder``
# is active, every such op reports how far its inputs sit from the nearest
# kink so the gradient-check harness can reject ill-conditioned instances.

_margin_sink = None


class margin_recorder:
    """Context manager collecting distances to non-differentiable points."""

    def __init__(self):
        self.margins = []

    def __enter__(self):
        global _margin_sink
        self._previous = _margin_sink
        _margin_sink = self
        return self

    def __exit__(self, *exc):
        global _margin_sink
        _margin_sink = self._previous
        return False

    @property
    def minimum(self):
        return min(self.margins, default=float("inf"))


def _note_margin(value):
    if _margin_sink is not None:
        _margin_sink.margins.append(float(value))


# --------------------------------------------------------------------------
# tensor

class Tensor:
    """Array node in the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @classmethod
    def _from_op(cls, data, parents, backward):
        out = cls(data)
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # -- introspection ----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- graph ------------------------------------------------------------
    def detach(self):
        return Tensor(self.data)

    def backward(self, grad=None):
        """Accumulate gradients of ``self`` into all reachable leaves."""
        if grad is None:
            grad = np.ones_like(self.data)
        # iterative post-order topo sort: parents before children
        topo, visited, stack = [], set(), [(self, False)]
        while stack:
            node, emitted = stack.pop()
            if emitted:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        _accumulate(self, np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return pow_(self, exponent)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t, g):
    # gradients are only ever re-bound, never mutated in place, so holding a
    # view here is safe and saves a copy
    if t.grad is None:
        t.grad = g if g.dtype == t.data.dtype else g.astype(t.data.dtype)
    else:
        t.grad = t.grad + g


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# --------------------------------------------------------------------------
# arithmetic

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return Tensor._from_op(data, (a, b), backward)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.data.shape))

    return Tensor._from_op(data, (a, b), backward)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor._from_op(data, (a, b), backward)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return Tensor._from_op(data, (a, b), backward)


def neg(a):
    a = _as_tensor(a)

    def backward(g):
        _accumulate(a, -g)

    return Tensor._from_op(-a.data, (a,), backward)


def pow_(a, exponent):
    """Elementwise power with a constant (python scalar) exponent."""
    a = _as_tensor(a)
    data = a.data ** exponent

    def backward(g):
        _accumulate(a, g * exponent * a.data ** (exponent - 1))

    return Tensor._from_op(data, (a,), backward)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul operands must have ndim >= 2")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            _accumulate(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            _accumulate(b, _unbroadcast(gb, b.data.shape))

    return Tensor._from_op(data, (a, b), backward)


# --------------------------------------------------------------------------
# reductions

def sum_(a, axis=None, keepdims=False):
    """Sum over one axis, a tuple of axes, or everything (axis=None)."""
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            grad = np.broadcast_to(g, a.data.shape)
        else:
            gk = g if keepdims else np.expand_dims(g, axis)
            grad = np.broadcast_to(gk, a.data.shape)
        _accumulate(a, grad)

    return Tensor._from_op(data, (a,), backward)


def mean_(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    if axis is None:
        n = a.data.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.data.shape[ax] for ax in axis]))
    else:
        n = a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def max_reduce(a, axis, keepdims=False, record=True):
    """Max over one axis; gradient routes to the first argmax per slice."""
    a = _as_tensor(a)
    x = a.data
    data = x.max(axis=axis, keepdims=keepdims)
    if record and _margin_sink is not None and x.shape[axis] > 1:
        top2 = np.partition(x, -2, axis=axis)
        gap = np.take(top2, -1, axis=axis) - np.take(top2, -2, axis=axis)
        # exact ties come from structurally equal values (clamped relus);
        # they cannot produce a finite-difference error unless an input
        # crosses its own kink, which the relu margins already track
        gap = gap[gap > 0]
        if gap.size:
            _note_margin(gap.min())

    def backward(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        grad = np.zeros_like(x)
        np.put_along_axis(grad, np.expand_dims(x.argmax(axis=axis), axis), gk, axis)
        _accumulate(a, grad)

    return Tensor._from_op(data, (a,), backward)


# --------------------------------------------------------------------------
# elementwise nonlinearities

def exp(a):
    a = _as_tensor(a)
    data = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * data)

    return Tensor._from_op(data, (a,), backward)


def log(a):
    a = _as_tensor(a)

    def backward(g):
        _accumulate(a, g / a.data)

    return Tensor._from_op(np.log(a.data), (a,), backward)


def sigmoid(a):
    a = _as_tensor(a)
    x = a.data
    data = np.empty_like(x)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)

    def backward(g):
        _accumulate(a, g * data * (1.0 - data))

    return Tensor._from_op(data, (a,), backward)


def leaky_relu(a, slope=0.2):
    a = _as_tensor(a)
    x = a.data
    if _margin_sink is not None and x.size:
        _note_margin(np.abs(x).min())
    # for 0 <= slope < 1, max(x, slope*x) equals the leaky form on both sides
    data = np.maximum(x, slope * x) if slope else np.maximum(x, 0.0)
    nonneg = x >= 0 if a.requires_grad else None

    def backward(g):
        _accumulate(a, np.where(nonneg, g, slope * g) if slope
                    else np.where(nonneg, g, 0.0))

    return Tensor._from_op(data, (a,), backward)


def relu(a):
    return leaky_relu(a, slope=0.0)


# --------------------------------------------------------------------------
# shape manipulation

def reshape(a, shape):
    a = _as_tensor(a)

    def backward(g):
        _accumulate(a, g.reshape(a.data.shape))

    return Tensor._from_op(a.data.reshape(shape), (a,), backward)


def transpose_(a, axes):
    a = _as_tensor(a)
    inverse = np.argsort(axes)

    def backward(g):
        _accumulate(a, g.transpose(inverse))

    return Tensor._from_op(a.data.transpose(axes), (a,), backward)


def concat(tensors, axis=-1):
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accumulate(t, g[tuple(sl)])

    return Tensor._from_op(data, tuple(tensors), backward)


def gather_rows(a, index):
    """Index the leading axis with an integer array of any shape.

    Output shape is ``index.shape + a.shape[1:]``; the gradient scatter-adds
    duplicated rows (bincount per column, which is much faster than
    ``np.add.at`` for the narrow rows used here).
    """
    a = _as_tensor(a)
    index = np.asarray(index)
    data = a.data[index]

    def backward(g):
        rows = a.data.shape[0]
        width = int(np.prod(a.data.shape[1:], dtype=np.int64))
        if width > 16:
            grad = np.zeros_like(a.data)
            np.add.at(grad, index, g)
        else:
            flat_idx = index.ravel()
            flat_g = np.ascontiguousarray(g.reshape(-1, width))
            grad = np.empty((rows, width), dtype=a.data.dtype)
            for c in range(width):
                grad[:, c] = np.bincount(flat_idx, weights=flat_g[:, c],
                                         minlength=rows)
            grad = grad.reshape(a.data.shape)
        _accumulate(a, grad)

    return Tensor._from_op(data, (a,), backward)


def dropout(a, rate, rng, training):
    """Inverted dropout; identity when not training or when rate is zero."""
    a = _as_tensor(a)
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode requires an rng")
    keep = (rng.random(a.data.shape) >= rate).astype(a.data.dtype) / (1.0 - rate)

    def backward(g):
        _accumulate(a, g * keep)

    return Tensor._from_op(a.data * keep, (a,), backward)


# --------------------------------------------------------------------------
# composites

def softmax(a, axis=-1):
    """Numerically stable softmax (max-subtracted before exponentiation)."""
    a = _as_tensor(a)
    shift = max_reduce(a, axis=axis, keepdims=True, record=False).detach()
    e = exp(sub(a, shift))
    return div(e, sum_(e, axis=axis, keepdims=True))


def log_softmax(a, axis=-1):
    a = _as_tensor(a)
    shift = max_reduce(a, axis=axis, keepdims=True, record=False).detach()
    z = sub(a, shift)
    return sub(z, log(sum_(exp(z), axis=axis, keepdims=True)))
