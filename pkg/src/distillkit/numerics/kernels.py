"""Elementwise and row-wise hot kernels with two interchangeable backends.

The numba backend is used when numba imports and ``DISTILLKIT_BACKEND`` is
unset or ``numba``; ``DISTILLKIT_BACKEND=numpy`` forces the pure-numpy path.
Both backends are exported under explicit names so the benchmark and the
parity tests can call either one regardless of the flag.
"""
from __future__ import annotations

import math
import os

import numpy as np
from scipy.special import erf as _erf

_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# -- numpy backend ---------------------------------------------------------

def gelu_forward_np(x):
    return 0.5 * x * (1.0 + _erf(x * _SQRT_HALF))


def gelu_backward_np(x, gy):
    cdf = 0.5 * (1.0 + _erf(x * _SQRT_HALF))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return gy * (cdf + x * pdf)


def layer_norm_forward_np(x, eps):
    """Normalize rows of a 2-D array. Returns (xhat, rstd)."""
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    return xc * rstd, rstd[:, 0]


def layer_norm_backward_np(gxhat, xhat, rstd):
    n = xhat.shape[1]
    a = gxhat.mean(axis=1, keepdims=True)
    b = (gxhat * xhat).sum(axis=1, keepdims=True) / n
    return (gxhat - a - xhat * b) * rstd[:, None]


def col2im_np(cols, stride, length):
    """Overlap-add (n, Lo, C, K) window gradients back onto (n, C, length)."""
    n, l_out, c, kernel = cols.shape
    out = np.zeros((n, c, length))
    span = stride * (l_out - 1) + 1
    for k in range(kernel):
        out[:, :, k:k + span:stride] += cols[:, :, :, k].transpose(0, 2, 1)
    return out


# -- numba backend ---------------------------------------------------------

try:
    import numba as nb
except ImportError:  # pragma: no cover - numba is a declared dependency
    nb = None

if nb is not None:

    @nb.njit(cache=True)
    def _gelu_forward_nb(flat, out):
        for i in range(flat.size):
            v = flat[i]
            out[i] = 0.5 * v * (1.0 + math.erf(v * _SQRT_HALF))

    @nb.njit(cache=True)
    def _gelu_backward_nb(flat, gflat, out):
        for i in range(flat.size):
            v = flat[i]
            cdf = 0.5 * (1.0 + math.erf(v * _SQRT_HALF))
            pdf = _INV_SQRT_2PI * math.exp(-0.5 * v * v)
            out[i] = gflat[i] * (cdf + v * pdf)

    @nb.njit(cache=True)
    def _layer_norm_forward_nb(x, eps, xhat, rstd):
        rows, n = x.shape
        for r in range(rows):
            mu = 0.0
            for j in range(n):
                mu += x[r, j]
            mu /= n
            var = 0.0
            for j in range(n):
                d = x[r, j] - mu
                var += d * d
            var /= n
            s = 1.0 / math.sqrt(var + eps)
            rstd[r] = s
            for j in range(n):
                xhat[r, j] = (x[r, j] - mu) * s

    @nb.njit(cache=True)
    def _layer_norm_backward_nb(gxhat, xhat, rstd, gx):
        rows, n = xhat.shape
        for r in range(rows):
            a = 0.0
            b = 0.0
            for j in range(n):
                a += gxhat[r, j]
                b += gxhat[r, j] * xhat[r, j]
            a /= n
            b /= n
            s = rstd[r]
            for j in range(n):
                gx[r, j] = (gxhat[r, j] - a - xhat[r, j] * b) * s


    @nb.njit(cache=True)
    def _col2im_nb(cols, stride, out):
        n, l_out, c, kernel = cols.shape
        for b in range(n):
            for t in range(l_out):
                base = t * stride
                for ch in range(c):
                    for k in range(kernel):
                        out[b, ch, base + k] += cols[b, t, ch, k]


def col2im_nb(cols, stride, length):
    n, _, c, _ = cols.shape
    out = np.zeros((n, c, length))
    _col2im_nb(np.ascontiguousarray(cols), int(stride), out)
    return out


def gelu_forward_nb(x):
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    _gelu_forward_nb(x.reshape(-1), out.reshape(-1))
    return out


def gelu_backward_nb(x, gy):
    x = np.ascontiguousarray(x)
    gy = np.ascontiguousarray(gy)
    out = np.empty_like(x)
    _gelu_backward_nb(x.reshape(-1), gy.reshape(-1), out.reshape(-1))
    return out


def layer_norm_forward_nb(x, eps):
    x = np.ascontiguousarray(x)
    xhat = np.empty_like(x)
    rstd = np.empty(x.shape[0])
    _layer_norm_forward_nb(x, float(eps), xhat, rstd)
    return xhat, rstd


def layer_norm_backward_nb(gxhat, xhat, rstd):
    gxhat = np.ascontiguousarray(gxhat)
    gx = np.empty_like(gxhat)
    _layer_norm_backward_nb(gxhat, np.ascontiguousarray(xhat), rstd, gx)
    return gx


# -- dispatch --------------------------------------------------------------

NUMPY_KERNELS = {
    "gelu_forward": gelu_forward_np,
    "gelu_backward": gelu_backward_np,
    "layer_norm_forward": layer_norm_forward_np,
    "layer_norm_backward": layer_norm_backward_np,
    "col2im": col2im_np,
}
NUMBA_KERNELS = {
    "gelu_forward": gelu_forward_nb,
    "gelu_backward": gelu_backward_nb,
    "layer_norm_forward": layer_norm_forward_nb,
    "layer_norm_backward": layer_norm_backward_nb,
    "col2im": col2im_nb,
} if nb is not None else None


def _select_backend():
    requested = os.environ.get("DISTILLKIT_BACKEND", "numba").strip().lower()
    if requested not in ("numba", "numpy"):
        raise ValueError(f"DISTILLKIT_BACKEND must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numba" and NUMBA_KERNELS is not None:
        return "numba"
    return "numpy"


BACKEND = _select_backend()
_ACTIVE = NUMBA_KERNELS if BACKEND == "numba" else NUMPY_KERNELS

gelu_forward = _ACTIVE["gelu_forward"]
gelu_backward = _ACTIVE["gelu_backward"]
layer_norm_forward = _ACTIVE["layer_norm_forward"]
layer_norm_backward = _ACTIVE["layer_norm_backward"]
col2im = _ACTIVE["col2im"]
