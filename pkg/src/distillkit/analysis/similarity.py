"""Layer-by-layer representation similarity between two encoders."""
from __future__ import annotations

import numpy as np

from distillkit.errors import ContractError, ShapeError
from distillkit.model.encoder import strip_aux

METRICS = ("cosine", "cka")


def linear_cka(x, y):
    """Linear CKA between (n, dx) and (n, dy) feature matrices."""
    x = x - x.mean(axis=0, keepdims=True)
    y = y - y.mean(axis=0, keepdims=True)
    cross = np.linalg.norm(x.T @ y) ** 2
    denom = np.linalg.norm(x.T @ x) * np.linalg.norm(y.T @ y)
    return float(cross / denom) if denom > 0 else 0.0


def frame_cosine(x, y, eps=1e-8):
    nx = np.maximum(np.linalg.norm(x, axis=-1), eps)
    ny = np.maximum(np.linalg.norm(y, axis=-1), eps)
    return (x * y).sum(axis=-1) / (nx * ny)


def similarity_matrix(states_a, states_b, metric="cka"):
    """Layer grid from per-layer (frames, dim) arrays pooled over the probe."""
    if metric not in METRICS:
        raise ContractError(f"metric must be one of {METRICS}, got {metric!r}")
    out = np.empty((len(states_a), len(states_b)))
    for i, a in enumerate(states_a):
        for j, b in enumerate(states_b):
            if a.shape[0] != b.shape[0]:
                raise ShapeError(f"layer {i + 1} and {j + 1} hold different frame counts")
            if metric == "cosine":
                if a.shape[1] != b.shape[1]:
                    raise ShapeError(f"cosine needs equal widths, got {a.shape[1]} and {b.shape[1]}; use cka")
                out[i, j] = frame_cosine(a, b).mean()
            else:
                out[i, j] = linear_cka(a, b)
    return out


def probe_states(model, probe):
    """Hidden states of the evaluation view of ``model``, frames of all probe items stacked."""
    model = strip_aux(model)
    per_layer = [[] for _ in range(model.config.n_layers)]
    for wave in probe:
        samples = wave.samples if hasattr(wave, "samples") else np.asarray(wave)
        for k, s in enumerate(model(samples[None, :])):
            per_layer[k].append(s.data[0])
    return [np.concatenate(chunks, axis=0) for chunks in per_layer]


def layer_similarity(model_a, model_b, probe, metric="cka", min_items=10):
    if not probe:
        raise ContractError("layer_similarity needs a non-empty probe corpus")
    if len(probe) < min_items:
        raise ContractError(f"probe has {len(probe)} items; at least {min_items} are required")
    return similarity_matrix(probe_states(model_a, probe), probe_states(model_b, probe), metric)
