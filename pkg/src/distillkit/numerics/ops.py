"""Differentiable primitives.

Every function takes and returns :class:`Tensor`; the backward closure of each
node maps the output gradient to one gradient per parent (``None`` when the
parent does not need one).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from distillkit.errors import ContractError, ShapeError
from distillkit.numerics import kernels
from distillkit.numerics.tensor import Tensor, as_tensor

COSINE_EPS = 1e-8
_UNFOLD_BUDGET = 1 << 22  # floats per unfolded chunk


def _node(data, parents, backward, op):
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward, op=op)
    return Tensor(data, op=op)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# -- elementwise -----------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data * b.data, (a, b), backward, "mul")


def scale(x, factor):
    x = as_tensor(x)
    factor = float(factor)
    return _node(x.data * factor, (x,), lambda g: (g * factor,), "scale")


def gelu(x):
    """Exact GELU, x * Phi(x)."""
    x = as_tensor(x)
    return _node(kernels.gelu_forward(x.data), (x,), lambda g: (kernels.gelu_backward(x.data, g),), "gelu")


def log_sigmoid(x):
    x = as_tensor(x)
    out = -np.logaddexp(0.0, -x.data)

    def backward(g):
        # d/dx log sigma(x) = sigma(-x)
        return (g * np.exp(-np.logaddexp(0.0, x.data)),)

    return _node(out, (x,), backward, "log_sigmoid")


def dropout(x, rate, rng):
    if rate <= 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(keep))


# -- shape ----------------------------------------------------------------

def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None
    return _node(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes):
    x = as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _node(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose")


def crop(x, axis, start, stop):
    """Slice ``[start:stop]`` along one axis."""
    x = as_tensor(x)
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        return (gx,)

    return _node(x.data[index], (x,), backward, "crop")


# -- reductions -----------------------------------------------------------

def sum(x, axis=None, keepdims=False):  # noqa: A001
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(out, (x,), backward, "sum")


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size // max(out.size, 1) if x.data.size else 1

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _node(out, (x,), backward, "mean")


# -- linear algebra ---------------------------------------------------------

def _swap(a):
    return np.swapaxes(a, -1, -2)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: batch dimensions differ, {a.shape} @ {b.shape}") from None

    def backward(g):
        ga = _unbroadcast(np.matmul(g, _swap(b.data)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(_swap(a.data), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), backward, "matmul")


def linear(x, weight, bias=None):
    """``x @ weight + bias`` with weight stored (in_dim, out_dim)."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


def conv1d_output_length(length, kernel, stride=1, padding=0):
    return (length + 2 * padding - kernel) // stride + 1


def _im2col(xp, kernel, stride, l_out, groups):
    """(n, C, Lp) -> (groups, n * l_out, C/groups * kernel), contiguous."""
    n, c, _ = xp.shape
    win = sliding_window_view(xp, kernel, axis=2)[:, :, ::stride][:, :, :l_out]  # n, C, Lo, K
    win = win.reshape(n, groups, c // groups, l_out, kernel).transpose(1, 0, 3, 2, 4)
    return np.ascontiguousarray(win).reshape(groups, n * l_out, (c // groups) * kernel)


def conv1d(x, weight, bias=None, stride=1, groups=1, padding=0):
    """Grouped 1-D convolution over (batch, channels, time).

    Weight layout is (out_channels, in_channels // groups, kernel). Windows are
    unfolded in batch chunks so the unfolded buffer stays bounded even for the
    128-tap positional convolution.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3:
        raise ShapeError(f"conv1d input must be (batch, channels, time), got {x.shape}")
    if weight.ndim != 3:
        raise ShapeError(f"conv1d weight must be (out, in/groups, kernel), got {weight.shape}")
    batch, c_in, length = x.shape
    c_out, c_group, kernel = weight.shape
    if c_in % groups or c_out % groups or c_group * groups != c_in:
        raise ShapeError(
            f"conv1d: {c_in} input channels, weight {weight.shape} and groups={groups} are inconsistent"
        )
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeError(f"conv1d bias must have shape ({c_out},), got {bias.shape}")
    l_out = conv1d_output_length(length, kernel, stride, padding)
    if l_out < 1:
        raise ShapeError(f"conv1d: input length {length} is shorter than kernel {kernel}")
    o_group = c_out // groups
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    wg = weight.data.reshape(groups, o_group, c_group * kernel)
    chunk = max(1, _UNFOLD_BUDGET // max(1, l_out * c_in * kernel))
    spans = [(i, min(i + chunk, batch)) for i in range(0, batch, chunk)]

    out = np.empty((batch, c_out, l_out))
    for lo, hi in spans:
        cols = _im2col(xp[lo:hi], kernel, stride, l_out, groups)
        y = np.matmul(cols, _swap(wg))  # groups, n*Lo, Og
        out[lo:hi] = y.reshape(groups, hi - lo, l_out, o_group).transpose(1, 0, 3, 2).reshape(hi - lo, c_out, l_out)
    if bias is not None:
        out += bias.data[None, :, None]

    def backward(g):
        gx = gw = gb = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
        if weight.requires_grad:
            gw = np.zeros_like(wg)
        for lo, hi in spans:
            n = hi - lo
            gg = g[lo:hi].reshape(n, groups, o_group, l_out).transpose(1, 0, 3, 2).reshape(groups, n * l_out, o_group)
            if weight.requires_grad:
                cols = _im2col(xp[lo:hi], kernel, stride, l_out, groups)
                gw += np.matmul(_swap(gg), cols)
            if x.requires_grad:
                gcols = np.matmul(gg, wg)  # groups, n*Lo, Cg*K
                gcols = gcols.reshape(groups, n, l_out, c_group, kernel).transpose(1, 2, 0, 3, 4)
                gcols = gcols.reshape(n, l_out, c_in, kernel)
                gxp[lo:hi] = kernels.col2im(np.ascontiguousarray(gcols), stride, xp.shape[-1])
        if x.requires_grad:
            gx = gxp[..., padding:padding + length] if padding else gxp
        if weight.requires_grad:
            gw = gw.reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, backward, "conv1d")


# -- normalization -----------------------------------------------------------

def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize over the last axis, then apply per-feature gain and bias."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    dim = x.shape[-1]
    if gain.shape != (dim,) or bias.shape != (dim,):
        raise ShapeError(f"layer_norm: gain/bias must have shape ({dim},), got {gain.shape}/{bias.shape}")
    rows = x.data.reshape(-1, dim)
    xhat, rstd = kernels.layer_norm_forward(rows, eps)
    out = (xhat * gain.data + bias.data).reshape(x.shape)

    def backward(g):
        g2 = g.reshape(-1, dim)
        gx = kernels.layer_norm_backward(g2 * gain.data, xhat, rstd).reshape(x.shape) if x.requires_grad else None
        return gx, (g2 * xhat).sum(axis=0), g2.sum(axis=0)

    return _node(out, (x, gain, bias), backward, "layer_norm")


def group_norm(x, gain, bias, num_groups, mask=None, eps=1e-5):
    """Group normalization over (channels-in-group, time) of a (batch, channels, time) input.

    ``mask`` (batch, time) restricts the statistics to valid frames; masked
    positions come out as exact zeros and receive no gradient.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if x.ndim != 3:
        raise ShapeError(f"group_norm input must be (batch, channels, time), got {x.shape}")
    batch, channels, length = x.shape
    if channels % num_groups:
        raise ShapeError(f"group_norm: {channels} channels not divisible into {num_groups} groups")
    if gain.shape != (channels,) or bias.shape != (channels,):
        raise ShapeError(f"group_norm: gain/bias must have shape ({channels},)")
    if mask is None:
        m = np.ones((batch, 1, 1, length))
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (batch, length):
            raise ShapeError(f"group_norm mask must be {(batch, length)}, got {mask.shape}")
        m = mask[:, None, None, :].astype(np.float64)
    per = channels // num_groups
    count = per * m.sum(axis=(1, 2, 3), keepdims=True)
    if (count == 0).any():
        raise ShapeError("group_norm: an item has no valid frames")
    xg = x.data.reshape(batch, num_groups, per, length)
    mu = (xg * m).sum(axis=(2, 3), keepdims=True) / count
    xc = (xg - mu) * m
    var = (xc * xc).sum(axis=(2, 3), keepdims=True) / count
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (xc * rstd).reshape(batch, channels, length)
    mflat = np.broadcast_to(m, (batch, 1, 1, length)).reshape(batch, 1, length)
    out = (xhat * gain.data[None, :, None] + bias.data[None, :, None]) * mflat

    def backward(g):
        g = g * mflat
        gx = None
        if x.requires_grad:
            gxhat = (g * gain.data[None, :, None]).reshape(batch, num_groups, per, length)
            xh = xhat.reshape(batch, num_groups, per, length)
            a = gxhat.sum(axis=(2, 3), keepdims=True) / count
            b = (gxhat * xh).sum(axis=(2, 3), keepdims=True) / count
            gx = ((gxhat - a - xh * b) * rstd * m).reshape(x.shape)
        return gx, (g * xhat).sum(axis=(0, 2)), g.sum(axis=(0, 2))

    return _node(out, (x, gain, bias), backward, "group_norm")


def softmax(x, axis=-1, mask=None):
    """Softmax along ``axis``; entries where ``mask`` is False get probability 0."""
    x = as_tensor(x)
    if mask is None:
        z = x.data - x.data.max(axis=axis, keepdims=True)
        e = np.exp(z)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask.any(axis=axis).all():
            raise ContractError("softmax: a row is fully masked")
        z = np.where(mask, x.data, -np.inf)
        z = z - z.max(axis=axis, keepdims=True)
        e = np.where(mask, np.exp(z), 0.0)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _node(y, (x,), backward, "softmax")


# -- distances ---------------------------------------------------------------

def l1_distance(a, b):
    """Mean absolute difference over the last (feature) axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"l1_distance: shapes differ, {a.shape} vs {b.shape}")
    diff = a.data - b.data
    dim = a.shape[-1]

    def backward(g):
        s = np.sign(diff) * (g[..., None] / dim)
        return (s if a.requires_grad else None), (-s if b.requires_grad else None)

    return _node(np.abs(diff).mean(axis=-1), (a, b), backward, "l1_distance")


def cosine_similarity(a, b, eps=COSINE_EPS):
    """Cosine similarity over the last (channel) axis.

    Norms are clamped from below at ``eps``, so a zero vector has similarity 0
    with everything.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"cosine_similarity: shapes differ, {a.shape} vs {b.shape}")
    ra = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    rb = np.sqrt((b.data * b.data).sum(axis=-1, keepdims=True))
    na, nb_ = np.maximum(ra, eps), np.maximum(rb, eps)
    dot = (a.data * b.data).sum(axis=-1, keepdims=True)
    c = dot / (na * nb_)

    def backward(g):
        g = g[..., None]
        ga = gb = None
        if a.requires_grad:
            ga = g * (b.data / (na * nb_) - c * a.data / (na * na) * (ra > eps))
        if b.requires_grad:
            gb = g * (a.data / (na * nb_) - c * b.data / (nb_ * nb_) * (rb > eps))
        return ga, gb

    return _node(np.clip(c[..., 0], -1.0, 1.0), (a, b), backward, "cosine_similarity")
