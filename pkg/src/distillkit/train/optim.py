"""Adam with bias correction and optional global-norm clipping."""
from __future__ import annotations

import numpy as np

from distillkit.errors import TrainingAbort


def check_finite(grads):
    for name, g in grads.items():
        if not np.isfinite(g).all():
            bad = int((~np.isfinite(g)).sum())
            raise TrainingAbort(f"non-finite gradient in {name}: {bad} of {g.size} entries")


def clip_global_norm(grads, max_norm):
    if max_norm <= 0:
        return grads, None
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if norm <= max_norm:
        return grads, norm
    factor = max_norm / norm
    return {k: g * factor for k, g in grads.items()}, norm


class AdamState:
    """First/second moments keyed by parameter name, plus the update count."""

    def __init__(self, t=0, m=None, v=None):
        self.t = t
        self.m = m or {}
        self.v = v or {}


def adam_step(params, grads, state, lr, betas=(0.9, 0.98), eps=1e-6):
    """In-place Adam update of ``params`` (name -> Tensor) from ``grads`` (name -> array)."""
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    check_finite(grads)
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        if lr == 0.0:
            continue
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state
