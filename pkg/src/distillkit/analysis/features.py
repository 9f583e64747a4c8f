"""Softmax-weighted sum of hidden layers, the frozen-upstream feature interface."""
from __future__ import annotations

import numpy as np

from distillkit.errors import ShapeError
from distillkit.numerics.tensor import Tensor


def layer_weights(weights):
    w = np.asarray(weights, dtype=np.float64)
    e = np.exp(w - w.max())
    return e / e.sum()


def weighted_sum_features(hidden_states, weights):
    states = [s.data if isinstance(s, Tensor) else np.asarray(s, dtype=np.float64) for s in hidden_states]
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if len(states) != len(weights):
        raise ShapeError(f"{len(states)} hidden states but {len(weights)} layer weights")
    if not states:
        raise ShapeError("no hidden states to combine")
    shape = states[0].shape
    if any(s.shape != shape for s in states):
        raise ShapeError(f"hidden states differ in shape: {sorted({s.shape for s in states})}")
    p = layer_weights(weights)
    out = np.zeros(shape)
    for w, s in zip(p, states):
        out += w * s
    return out
