"""Differentiable operations on :class:`Tensor`.

Only the broadcasting the model needs is supported: elementwise binary ops
broadcast numpy-style and reduce gradients back to the operand shape.
"""
import math

import numpy as np
from scipy.special import erf

from .. import _kernels
from .tensor import Tensor, as_tensor


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested op."""


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _lift(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


# -- elementwise ---------------------------------------------------------

def add(a, b):
    a = as_tensor(a)
    b = _lift(b, a)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._make(out, (a, b), backward)


def sub(a, b):
    if not isinstance(a, Tensor):
        a = _lift(a, b)
    b = _lift(b, a)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._make(out, (a, b), backward)


def mul(a, b):
    a = as_tensor(a)
    b = _lift(b, a)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._make(out, (a, b), backward)


def div(a, b):
    a = as_tensor(a)
    b = _lift(b, a)
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._make(out, (a, b), backward)


def exp(x):
    out = np.exp(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out,))


def log(x):
    return Tensor._make(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x):
    out = np.sqrt(x.data)
    return Tensor._make(out, (x,), lambda g: (g * 0.5 / out,))


def square(x):
    return Tensor._make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def sigmoid(x):
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)
    return Tensor._make(out, (x,), lambda g: (g * out * (1.0 - out),))


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    """Exact GELU, x * Phi(x) with Phi the standard normal CDF."""
    d = x.data
    cdf = (0.5 * (1.0 + erf(d * _INV_SQRT2))).astype(d.dtype)
    out = d * cdf

    def backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * d * d)
        return (g * (cdf + d * pdf),)

    return Tensor._make(out, (x,), backward)


# -- shape ---------------------------------------------------------------

def reshape(x, shape):
    out = x.data.reshape(shape)
    return Tensor._make(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x):
    if x.ndim != 2:
        raise ShapeError("transpose expects a 2-d tensor")
    return Tensor._make(x.data.T, (x,), lambda g: (g.T,))


def rows(x, start, stop):
    """Slice ``x[start:stop]`` along the leading axis."""
    out = x.data[start:stop]

    def backward(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        return (full,)

    return Tensor._make(out, (x,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return Tensor._make(out, tuple(tensors), backward)


# -- reductions ----------------------------------------------------------

def sum(x, axis=None, keepdims=False):
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return Tensor._make(np.asarray(out, dtype=x.dtype), (x,), backward)


def mean(x, axis=None, keepdims=False):
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis, keepdims), 1.0 / float(count))


def log_softmax(x, axis=-1):
    d = x.data
    shifted = d - d.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        sm = np.exp(out)
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (x,), backward)


def l2_normalize(x, axis=-1, eps=1e-12):
    """x / (||x|| + eps) along ``axis``."""
    d = x.data
    norm = np.sqrt(np.sum(d * d, axis=axis, keepdims=True))
    denom = norm + eps
    out = d / denom

    def backward(g):
        # d/dx [x / (|x|+eps)] = g/denom - x * <g, x> / (denom^2 * |x|)
        dot = np.sum(g * d, axis=axis, keepdims=True)
        safe = np.where(norm > 0, norm, 1.0)
        return (g / denom - d * dot / (denom * denom * safe),)

    return Tensor._make(out, (x,), backward)


# -- linear algebra ------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} @ {b.shape}")
    out = a.data @ b.data
    return Tensor._make(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x, w, b=None):
    """x @ w.T + b with x (B, N), w (M, N), b (M,)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} vs weight {w.shape}")
    out = x.data @ w.data.T
    if b is not None:
        if b.shape != (w.shape[0],):
            raise ShapeError(f"linear: bias {b.shape} vs weight {w.shape}")
        out = out + b.data

    def backward(g):
        gx = g @ w.data
        gw = g.T @ x.data
        gb = g.sum(axis=0) if b is not None else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._make(out, parents, backward)


# -- convolution ---------------------------------------------------------

def _conv_out(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def conv2d(x, w, b=None, stride=2, pad=1):
    """Cross-correlation of NCHW ``x`` with ``w`` of shape (C_out, C_in, k, k)."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1] or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d: input {x.shape} vs weight {w.shape}")
    bsz, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    if h + 2 * pad < k or wd + 2 * pad < k:
        raise ShapeError(f"conv2d: spatial size {(h, wd)} smaller than kernel {k} after padding")
    oh, ow = _conv_out(h, k, stride, pad), _conv_out(wd, k, stride, pad)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    xp = np.ascontiguousarray(xp)
    cols = _kernels.im2col(xp, k, stride, oh, ow).reshape(bsz * oh * ow, cin * k * k)
    wmat = w.data.reshape(cout, cin * k * k)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out = out.reshape(bsz, oh, ow, cout).transpose(0, 3, 1, 2)

    def backward(g):
        gf = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(bsz * oh * ow, cout)
        gw = (gf.T @ cols).reshape(w.shape)
        gcols = np.ascontiguousarray((gf @ wmat).reshape(bsz, oh, ow, cin, k, k))
        gxp = _kernels.col2im(gcols, xp.shape[2], xp.shape[3], stride)
        gx = gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp
        gb = gf.sum(axis=0) if b is not None else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._make(np.ascontiguousarray(out), parents, backward)


def conv2d_transpose(x, w, b=None, stride=2, pad=1, output_pad=0):
    """Adjoint of :func:`conv2d` w.r.t. its input; ``w`` is (C_in, C_out, k, k).

    Output size is (in - 1) * stride - 2 * pad + k + output_pad.
    """
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0] or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d_transpose: input {x.shape} vs weight {w.shape}")
    if not 0 <= output_pad < stride:
        raise ShapeError("output_pad must be in [0, stride)")
    bsz, cin, h, wd = x.shape
    _, cout, k, _ = w.shape
    oh = (h - 1) * stride - 2 * pad + k + output_pad
    ow = (wd - 1) * stride - 2 * pad + k + output_pad
    if oh < 1 or ow < 1:
        raise ShapeError("conv2d_transpose: empty output")
    hp, wp = oh + 2 * pad, ow + 2 * pad
    xf = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(bsz * h * wd, cin)
    wmat = w.data.reshape(cin, cout * k * k)
    cols = np.ascontiguousarray((xf @ wmat).reshape(bsz, h, wd, cout, k, k))
    canvas = _kernels.col2im(cols, hp, wp, stride)
    out = canvas[:, :, pad : pad + oh, pad : pad + ow]
    if b is not None:
        out = out + b.data[None, :, None, None]

    def backward(g):
        gp = np.pad(g, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else g
        gcols = _kernels.im2col(np.ascontiguousarray(gp), k, stride, h, wd).reshape(bsz * h * wd, cout * k * k)
        gx = (gcols @ wmat.T).reshape(bsz, h, wd, cin).transpose(0, 3, 1, 2)
        gw = (xf.T @ gcols).reshape(w.shape)
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return np.ascontiguousarray(gx), gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._make(np.ascontiguousarray(out), parents, backward)


def avgpool2d(x, kernel=2, stride=2):
    """Non-overlapping average pooling with floor semantics."""
    if kernel != stride:
        raise NotImplementedError("only kernel == stride pooling is supported")
    if x.ndim != 4 or x.shape[2] < kernel or x.shape[3] < kernel:
        raise ShapeError(f"avgpool2d: input {x.shape} smaller than kernel {kernel}")
    bsz, c, h, wd = x.shape
    oh, ow = h // kernel, wd // kernel
    crop = x.data[:, :, : oh * kernel, : ow * kernel]
    out = crop.reshape(bsz, c, oh, kernel, ow, kernel).mean(axis=(3, 5))

    def backward(g):
        gx = np.zeros_like(x.data)
        spread = np.repeat(np.repeat(g, kernel, axis=2), kernel, axis=3) / (kernel * kernel)
        gx[:, :, : oh * kernel, : ow * kernel] = spread
        return (gx,)

    return Tensor._make(out.astype(x.dtype), (x,), backward)
