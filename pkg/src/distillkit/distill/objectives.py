"""Distillation losses: prediction-layer, layer-to-layer and their interpolation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from distillkit.distill.mapping import LayerMap, MappingStrategy, realize_mapping
from distillkit.errors import ConfigError, ShapeError
from distillkit.model.encoder import apply_adapter
from distillkit.numerics import ops
from distillkit.numerics.tensor import Tensor, as_tensor

KD_KINDS = ("pred", "pred_all", "l2l", "l2l_n_of_m", "combined")


def _frames(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def pair_loss(student, teacher, lambda_cos=1.0, mask=None):
    """L1 distance minus ``lambda_cos`` times log-sigmoid cosine similarity.

    Inputs are (frames, dim) or (batch, frames, dim), both already in the
    teacher's width. The teacher side never receives a gradient. With a
    batch, each item is averaged over its valid frames (``mask``) and the
    items are then averaged, so padding never changes the value.
    """
    student = as_tensor(student)
    teacher = Tensor(_frames(teacher))
    if student.shape != teacher.shape:
        raise ShapeError(f"pair_loss: student {student.shape} vs teacher {teacher.shape}")
    if student.ndim not in (2, 3):
        raise ShapeError(f"pair_loss expects (frames, dim) or (batch, frames, dim), got {student.shape}")
    if student.shape[-2] == 0:
        raise ShapeError("pair_loss: zero-length time axis")
    if lambda_cos < 0:
        raise ConfigError(f"lambda_cos must be >= 0, got {lambda_cos}")
    l1 = ops.l1_distance(student, teacher)
    cos = ops.log_sigmoid(ops.cosine_similarity(student, teacher))
    per_frame = ops.sub(l1, ops.scale(cos, lambda_cos))
    if student.ndim == 2:
        return ops.mean(per_frame)
    if mask is None:
        mask = np.ones(student.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != student.shape[:2]:
        raise ShapeError(f"pair_loss mask {mask.shape} does not match {student.shape[:2]}")
    counts = mask.sum(axis=1)
    if (counts == 0).any():
        raise ShapeError("pair_loss: an item has no valid frames")
    weights = Tensor(mask / counts[:, None])
    return ops.mean(ops.sum(ops.mul(per_frame, weights), axis=1))


def _check_teacher(teacher_states, layers):
    top = max(layers)
    if top > len(teacher_states):
        raise ConfigError(f"teacher has {len(teacher_states)} layers, target layer {top} requested")


def pred_loss(student, student_states, teacher_states, mask=None, lambda_cos=1.0, targets=None):
    """Mean over prediction heads of pair_loss(head_i(last student state), teacher layer t_i)."""
    spec = student.aux_spec("prediction_heads")
    if spec is None:
        raise ConfigError("prediction-layer distillation needs prediction heads on the student")
    if targets is not None and tuple(targets) != spec.layers:
        raise ConfigError(f"student has heads for teacher layers {spec.layers}, asked for {tuple(targets)}")
    _check_teacher(teacher_states, spec.layers)
    last = student_states[-1]
    terms = [
        pair_loss(apply_adapter(student, spec, i, last), teacher_states[t - 1], lambda_cos, mask)
        for i, t in enumerate(spec.layers)
    ]
    return _average(terms)


def l2l_loss(student, student_states, teacher_states, layer_map, mask=None, lambda_cos=1.0):
    """Mean over mapped pairs of pair_loss(project(student layer s), teacher layer t)."""
    spec = student.aux_spec("projection_layers")
    s_dim = student.config.embed_dim
    t_dim = _frames(teacher_states[0]).shape[-1]
    if spec is None:
        if s_dim != t_dim:
            raise ConfigError(f"student width {s_dim} differs from teacher width {t_dim} and no projections exist")
    elif not spec.identity and not set(layer_map.student_layers) <= set(spec.layers):
        raise ConfigError(f"no projection for student layers {sorted(set(layer_map.student_layers) - set(spec.layers))}")
    _check_teacher(teacher_states, layer_map.teacher_layers)
    terms = []
    for s, t in layer_map:
        x = student_states[s - 1]
        if spec is not None:
            x = apply_adapter(student, spec, spec.layers.index(s), x)
        terms.append(pair_loss(x, teacher_states[t - 1], lambda_cos, mask))
    return _average(terms)


def _average(terms):
    total = terms[0]
    for t in terms[1:]:
        total = ops.add(total, t)
    return ops.scale(total, 1.0 / len(terms))


def _teacher_arrays(teacher_states):
    return [_frames(s) for s in teacher_states]


def pred_objective(student, teacher_states, target_layers, batch, lambda_cos=1.0):
    states = student(batch.waves, batch.lengths)
    return pred_loss(student, states, _teacher_arrays(teacher_states), batch.mask, lambda_cos, target_layers)


def l2l_objective(student, teacher_states, layer_map, batch, lambda_cos=1.0):
    states = student(batch.waves, batch.lengths)
    return l2l_loss(student, states, _teacher_arrays(teacher_states), layer_map, batch.mask, lambda_cos)


def check_weights(weights):
    w_pred, w_l2l = (float(w) for w in weights)
    if w_pred < 0 or w_l2l < 0 or abs(w_pred + w_l2l - 1.0) > 1e-12:
        raise ConfigError(f"combined weights must be non-negative and sum to 1, got ({w_pred}, {w_l2l})")
    return w_pred, w_l2l


def combined_objective(student, teacher_states, pred_targets, l2l_map, batch, weights=(0.8, 0.2), lambda_cos=1.0):
    w_pred, w_l2l = check_weights(weights)
    states = student(batch.waves, batch.lengths)
    teacher = _teacher_arrays(teacher_states)
    a = pred_loss(student, states, teacher, batch.mask, lambda_cos, pred_targets)
    b = l2l_loss(student, states, teacher, l2l_map, batch.mask, lambda_cos)
    return ops.add(ops.scale(a, w_pred), ops.scale(b, w_l2l))


@dataclass(frozen=True)
class DistillObjective:
    """Which loss graph to build.

    ``pred`` uses ``pred_targets`` (teacher layers read by heads on the last
    student layer); ``l2l`` uses ``l2l_mapping``; ``combined`` uses both,
    weighted ``pred_weight`` and ``1 - pred_weight``.
    """

    kind: str
    pred_targets: MappingStrategy = None
    l2l_mapping: MappingStrategy = None
    lambda_cos: float = 1.0
    pred_weight: float = 0.8
    head_hidden: int = 0

    def __post_init__(self):
        if self.kind not in ("pred", "l2l", "combined"):
            raise ConfigError(f"objective kind must be pred, l2l or combined, got {self.kind!r}")
        if self.lambda_cos < 0:
            raise ConfigError(f"lambda_cos must be >= 0, got {self.lambda_cos}")
        check_weights(self.weights)
        if self.kind in ("pred", "combined") and self.pred_targets is None:
            raise ConfigError(f"{self.kind} objective needs prediction targets")
        if self.kind in ("l2l", "combined") and self.l2l_mapping is None:
            raise ConfigError(f"{self.kind} objective needs a layer mapping")
        if self.pred_targets is not None and self.pred_targets.is_random:
            raise ConfigError("prediction heads need a fixed set of teacher layers")

    @property
    def weights(self):
        if self.kind == "pred":
            return (1.0, 0.0)
        if self.kind == "l2l":
            return (0.0, 1.0)
        return (self.pred_weight, 1.0 - self.pred_weight)

    @property
    def uses_pred(self):
        return self.kind in ("pred", "combined")

    @property
    def uses_l2l(self):
        return self.kind in ("l2l", "combined")

    def head_targets(self):
        return realize_mapping(self.pred_targets).teacher_layers if self.uses_pred else ()

    def layer_map(self, rng=None):
        return realize_mapping(self.l2l_mapping, rng) if self.uses_l2l else LayerMap(())

    def evaluate(self, student, student_states, teacher_states, mask=None, rng=None):
        """Returns (total, pred_term, l2l_term); unused terms are None."""
        teacher = _teacher_arrays(teacher_states)
        w_pred, w_l2l = self.weights
        pred = l2l = None
        total = None
        if self.uses_pred:
            pred = pred_loss(student, student_states, teacher, mask, self.lambda_cos)
            total = pred if self.kind == "pred" else ops.scale(pred, w_pred)
        if self.uses_l2l:
            l2l = l2l_loss(student, student_states, teacher, self.layer_map(rng), mask, self.lambda_cos)
            part = l2l if self.kind == "l2l" else ops.scale(l2l, w_l2l)
            total = part if total is None else ops.add(total, part)
        return total, pred, l2l

    def to_dict(self):
        def strat(s):
            if s is None:
                return None
            return {"kind": s.kind, "teacher_depth": s.teacher_depth, "student_depth": s.student_depth,
                    "stride": s.stride, "indices": list(s.indices), "n": s.n, "purpose": s.purpose}

        return {"kind": self.kind, "pred_targets": strat(self.pred_targets), "l2l_mapping": strat(self.l2l_mapping),
                "lambda_cos": self.lambda_cos, "pred_weight": self.pred_weight, "head_hidden": self.head_hidden}

    @classmethod
    def from_dict(cls, d):
        def strat(s):
            if s is None:
                return None
            return MappingStrategy(s["kind"], s["teacher_depth"], s["student_depth"], s.get("stride", 0),
                                   tuple(s.get("indices", ())), s.get("n", 0), s.get("purpose", "l2l"))

        return cls(d["kind"], strat(d.get("pred_targets")), strat(d.get("l2l_mapping")),
                   d.get("lambda_cos", 1.0), d.get("pred_weight", 0.8), d.get("head_hidden", 0))
