"""Parameterized layers built on the autodiff core.

``Module`` is a minimal container: any attribute that is a ``Tensor`` with
``requires_grad=True`` is a parameter, any attribute that is a ``Module``
(or a list of them) is a submodule, and ``named_parameters`` walks the tree
with dotted names.  Parameter iteration order is attribute insertion order,
so it is deterministic.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, add, matmul, log_softmax, mul, sum_, _accumulate
from . import autodiff

__all__ = [
    "Module", "Buffer", "Affine", "Conv2d", "MaxPool2d", "InstanceNorm",
    "glorot_uniform", "cross_entropy", "one_hot",
]


def glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Buffer(Tensor):
    """Non-trainable module state (running statistics and the like); saved
    in checkpoints but never touched by the optimizer.  No current layer
    carries one, but the module system and checkpoint format support them."""


class Module:
    """Base class for parameterized components."""

    def __init__(self):
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self):
        for name, value in vars(self).items():
            if name == "training":
                continue
            yield name, value

    def _walk(self, prefix, want_buffer):
        for name, value in self._children():
            if isinstance(value, Tensor):
                if isinstance(value, Buffer) == want_buffer and \
                        (want_buffer or value.requires_grad):
                    yield prefix + name, value
            elif isinstance(value, Module):
                yield from value._walk(prefix + name + ".", want_buffer)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item._walk(f"{prefix}{name}.{i}.", want_buffer)
                    elif isinstance(item, Tensor):
                        if isinstance(item, Buffer) == want_buffer and \
                                (want_buffer or item.requires_grad):
                            yield f"{prefix}{name}.{i}", item

    def named_parameters(self, prefix=""):
        yield from self._walk(prefix, want_buffer=False)

    def named_buffers(self, prefix=""):
        yield from self._walk(prefix, want_buffer=True)

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def train(self, mode=True):
        self.training = mode
        for _, value in self._children():
            if isinstance(value, Module):
                value.train(mode)
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        item.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def state_arrays(self):
        """Dotted name -> live ndarray for every parameter and buffer."""
        out = {name: p.data for name, p in self.named_parameters()}
        out.update({name: b.data for name, b in self.named_buffers()})
        return out

    def load_state_arrays(self, arrays, strict=True):
        own = dict(self.named_parameters())
        own.update(dict(self.named_buffers()))
        missing = sorted(set(own) - set(arrays))
        unexpected = sorted(set(arrays) - set(own))
        mismatched = sorted(
            name for name in set(own) & set(arrays)
            if own[name].data.shape != np.asarray(arrays[name]).shape
        )
        if strict and (missing or unexpected or mismatched):
            raise KeyError(
                "parameter mismatch: "
                f"missing={missing} unexpected={unexpected} shape_mismatch={mismatched}"
            )
        for name, p in own.items():
            if name in arrays and name not in mismatched:
                p.data = np.asarray(arrays[name], dtype=p.data.dtype).copy()
        return missing, unexpected


def linear_rows(x, weight, bias):
    """Affine map computed row by row: each output row comes from a
    (1, K) x (K, N) product, so a row's bits do not depend on how many other
    rows share the batch (a plain (B, K) GEMM has no such guarantee)."""
    out = np.matmul(x.data[:, None, :], weight.data)[:, 0, :]
    if bias is not None:
        out = out + bias.data

    def backward(g):
        if weight.requires_grad:
            _accumulate(weight, x.data.T @ g)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=0))
        if x.requires_grad:
            _accumulate(x, np.matmul(g[:, None, :], weight.data.T)[:, 0, :])

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward)


class Affine(Module):
    """x @ W + b with Glorot-uniform weights and zero bias.

    ``row_stable=True`` routes 2-D inputs through :func:`linear_rows` for
    bitwise batch-size independence (used where the contract requires batch
    extraction to equal item-at-a-time extraction exactly)."""

    def __init__(self, n_in, n_out, rng, dtype=np.float32, bias=True,
                 row_stable=False):
        super().__init__()
        self.weight = Tensor(
            glorot_uniform(rng, (n_in, n_out), n_in, n_out, dtype), requires_grad=True
        )
        self.bias = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True) if bias else None
        self.row_stable = row_stable

    def forward(self, x):
        if self.row_stable and x.data.ndim == 2:
            return linear_rows(x, self.weight, self.bias)
        y = matmul(x, self.weight)
        if self.bias is not None:
            y = add(y, self.bias)
        return y


# --------------------------------------------------------------------------
# convolution / pooling as dedicated ops (im2col based)

def _output_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


def _im2col(x, kh, kw, stride, padding):
    b, c, h, w = x.shape
    ho = _output_size(h, kh, stride, padding)
    wo = _output_size(w, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((b, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(b, c * kh * kw, ho * wo), (ho, wo)


def _col2im(gcols, x_shape, kh, kw, stride, padding):
    b, c, h, w = x_shape
    ho = _output_size(h, kh, stride, padding)
    wo = _output_size(w, kw, stride, padding)
    gcols = gcols.reshape(b, c, kh, kw, ho, wo)
    gx = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=gcols.dtype)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, i, j]
    if padding:
        gx = gx[:, :, padding:-padding, padding:-padding]
    return gx


def conv2d(x, weight, bias, stride=1, padding=0):
    """2-D convolution; x is (B, C, H, W), weight (F, C, kh, kw), bias (F,)."""
    x = autodiff._as_tensor(x)
    f, c, kh, kw = weight.data.shape
    if x.data.shape[1] != c:
        raise ValueError(f"conv2d expects {c} input channels, got {x.data.shape[1]}")
    cols, (ho, wo) = _im2col(x.data, kh, kw, stride, padding)
    wmat = weight.data.reshape(f, c * kh * kw)
    out = wmat @ cols  # (B, F, L) via broadcasting
    if bias is not None:
        out = out + bias.data[:, None]
    out = out.reshape(x.data.shape[0], f, ho, wo)

    def backward(g):
        gm = g.reshape(g.shape[0], f, ho * wo)
        if weight.requires_grad:
            gw = np.einsum("bfl,bkl->fk", gm, cols).reshape(weight.data.shape)
            _accumulate(weight, gw)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, gm.sum(axis=(0, 2)))
        if x.requires_grad:
            gcols = wmat.T @ gm
            _accumulate(x, _col2im(gcols, x.data.shape, kh, kw, stride, padding))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward)


def max_pool2d(x, kernel, stride):
    """Max pooling (no padding); trailing rows/columns that do not fill a
    window are dropped."""
    x = autodiff._as_tensor(x)
    b, c, h, w = x.data.shape
    ho = (h - kernel) // stride + 1
    wo = (w - kernel) // stride + 1
    windows = np.empty((b, c, kernel * kernel, ho, wo), dtype=x.data.dtype)
    for i in range(kernel):
        for j in range(kernel):
            windows[:, :, i * kernel + j] = x.data[:, :, i:i + stride * ho:stride,
                                                   j:j + stride * wo:stride]
    arg = windows.argmax(axis=2)
    out = np.take_along_axis(windows, arg[:, :, None], axis=2)[:, :, 0]
    if autodiff._margin_sink is not None and kernel > 1:
        top2 = np.partition(windows, -2, axis=2)
        gap = top2[:, :, -1] - top2[:, :, -2]
        gap = gap[gap > 0]  # exact ties are clamped-relu zeros; harmless
        if gap.size:
            autodiff._note_margin(gap.min())

    def backward(g):
        gx = np.zeros((b, c, h, w), dtype=g.dtype)
        for widx in range(kernel * kernel):
            mask = (arg == widx)
            if not mask.any():
                continue
            i, j = divmod(widx, kernel)
            gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += g * mask
        _accumulate(x, gx)

    return Tensor._from_op(out, (x,), backward)


class InstanceNorm(Module):
    """Per-item, per-channel normalization with learned scale and shift.

    ``axis`` names the channel axis; statistics pool over every axis except
    the leading batch axis and the channel axis (so (B, N, C) point features
    standardize each shape's channels over its points, and (B, C, H, W) conv
    maps standardize each image's channels over space).  No statistics cross
    item boundaries: behavior is identical in training and evaluation, and
    batch composition cannot leak into features — the property that matters
    at the small batch sizes this package trains with.
    """

    def __init__(self, dim, dtype=np.float32, axis=-1, eps=1e-5):
        super().__init__()
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.axis = axis
        self.eps = eps

    def forward(self, x):
        ndim = x.data.ndim
        bshape = [1] * ndim
        bshape[self.axis] = self.gamma.data.shape[0]
        bshape = tuple(bshape)
        axes = tuple(i for i in range(1, ndim) if i != (self.axis % ndim))
        mu = autodiff.mean_(x, axis=axes, keepdims=True)
        centered = autodiff.sub(x, mu)
        var = autodiff.mean_(autodiff.mul(centered, centered),
                             axis=axes, keepdims=True)
        inv = autodiff.pow_(autodiff.add(var, self.eps), -0.5)
        gamma = autodiff.reshape(self.gamma, bshape)
        beta = autodiff.reshape(self.beta, bshape)
        return add(mul(mul(centered, inv), gamma), beta)


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, rng, stride=1, padding=0,
                 dtype=np.float32, bias=True):
        super().__init__()
        fan_in = c_in * kernel * kernel
        fan_out = c_out * kernel * kernel
        self.weight = Tensor(
            glorot_uniform(rng, (c_out, c_in, kernel, kernel), fan_in, fan_out, dtype),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class MaxPool2d(Module):
    def __init__(self, kernel, stride):
        super().__init__()
        self.kernel = kernel
        self.stride = stride

    def forward(self, x):
        return max_pool2d(x, self.kernel, self.stride)


# --------------------------------------------------------------------------
# losses

def one_hot(labels, n_classes, dtype=np.float32):
    labels = np.asarray(labels)
    out = np.zeros((labels.size, n_classes), dtype=dtype)
    out[np.arange(labels.size), labels.ravel()] = 1.0
    return out.reshape(labels.shape + (n_classes,))


def cross_entropy(logits, labels):
    """Mean cross-entropy of (B, C) logits against integer labels."""
    b, c = logits.data.shape
    target = Tensor(one_hot(labels, c, dtype=logits.data.dtype))
    ls = log_softmax(logits, axis=-1)
    return mul(sum_(mul(ls, target)), -1.0 / b)
