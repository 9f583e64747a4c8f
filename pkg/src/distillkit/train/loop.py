"""Deterministic distillation loop."""
from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from distillkit import __version__
from distillkit.data.batching import batch_at
from distillkit.distill.objectives import DistillObjective
from distillkit.errors import ConfigError, NumericDomainError, TrainingAbort
from distillkit.model.config import ModelConfig
from distillkit.model.encoder import (
    AuxHeads,
    Encoder,
    attach_prediction_heads,
    attach_projections,
    build_model,
    encoder_forward,
    frontend_forward,
)
from distillkit.numerics import rng
from distillkit.numerics.tensor import Tensor, backward
from distillkit.train.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from distillkit.train.config import RunConfig
from distillkit.train.optim import AdamState, adam_step, check_finite, clip_global_norm
from distillkit.train.schedule import lr_at

log = logging.getLogger(__name__)

TRACE_HEADER = ("step", "lr", "loss", "pred_term", "l2l_term")


# -- models <-> checkpoints -------------------------------------------------

def model_checkpoint(model, extra_config=None, optimizer=None, step=0, rng_state="{}"):
    config = {"model": model.config.to_dict(), "aux": [asdict(s) for s in model.aux_specs],
              "tool_version": __version__}
    config.update(extra_config or {})
    params = {name: p.data for name, p in model.named_parameters().items()}
    return Checkpoint(config, params, optimizer, step, rng_state)


def model_from_checkpoint(ckpt, trainable=True):
    if isinstance(ckpt, (str, os.PathLike)):
        ckpt = load_checkpoint(ckpt)
    config = ModelConfig.from_dict(ckpt.config["model"])
    specs = tuple(AuxHeads(**{**s, "layers": tuple(s["layers"])}) for s in ckpt.config.get("aux", []))
    params, aux = {}, {}
    for name, arr in ckpt.params.items():
        target = aux if name.startswith("aux.") else params
        target[name] = Tensor(arr.copy(), requires_grad=trainable, name=name)
    model = Encoder(config, params, aux, specs)
    missing = [n for n in build_shapes(config) if n not in params]
    if missing:
        raise ConfigError(f"checkpoint lacks parameters {missing[:3]}{'...' if len(missing) > 3 else ''}")
    return model


def build_shapes(config):
    from distillkit.model.config import parameter_shapes

    return [n for n, _ in parameter_shapes(config)]


# -- student construction ---------------------------------------------------

def init_student(teacher, student_config, seed):
    """Fresh student whose convolutional frontend is copied from the teacher."""
    if student_config.frontend != teacher.config.frontend:
        raise ConfigError("student and teacher frontends differ; the CNN block cannot be copied")
    student = build_model(student_config, seed)
    for name, p in teacher.params.items():
        if name.startswith("frontend."):
            student.params[name] = Tensor(p.data.copy(), requires_grad=True, name=name)
    return student


def prepare_student(teacher, student_config, objective, seed):
    student = init_student(teacher, student_config, seed)
    t_dim = teacher.config.embed_dim
    if objective.uses_pred:
        student = attach_prediction_heads(student, t_dim, objective.head_targets(), seed, objective.head_hidden)
    if objective.uses_l2l:
        layers = tuple(range(1, student_config.n_layers + 1))
        student = attach_projections(student, t_dim, layers, seed)
    return student


# -- the loop ---------------------------------------------------------------

@dataclass
class TraceRow:
    step: int
    lr: float
    loss: float
    pred_term: float | None
    l2l_term: float | None


@dataclass
class RunResult:
    checkpoint: Checkpoint
    trace: list = field(default_factory=list)
    student: Encoder = None


def write_trace(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in rows:
            w.writerow([r.step, repr(r.lr), repr(r.loss),
                        "" if r.pred_term is None else repr(r.pred_term),
                        "" if r.l2l_term is None else repr(r.l2l_term)])


def read_trace(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            rows.append(TraceRow(int(rec["step"]), float(rec["lr"]), float(rec["loss"]),
                                 float(rec["pred_term"]) if rec["pred_term"] else None,
                                 float(rec["l2l_term"]) if rec["l2l_term"] else None))
    return rows


def _pad_stack(arrays, frames):
    out = np.zeros((len(arrays), frames) + arrays[0].shape[1:])
    for i, a in enumerate(arrays):
        out[i, :len(a)] = a
    return out


class _ItemCache:
    """Per-item teacher states (and frozen frontend features), computed once per corpus item."""

    def __init__(self, teacher, student, corpus, cache_features):
        self.teacher = teacher
        self.student = student
        self.corpus = corpus
        self.cache_features = cache_features
        self.teacher_states = {}
        self.features = {}

    def _fill(self, i):
        wave = self.corpus[i].samples[None, :]
        t_feats = frontend_forward(self.teacher, wave)
        self.teacher_states[i] = [s.data[0] for s in encoder_forward(self.teacher, t_feats)]
        if self.cache_features:
            self.features[i] = frontend_forward(self.student, wave).data[0]

    def batch(self, batch):
        for i in batch.indices:
            if int(i) not in self.teacher_states:
                self._fill(int(i))
        frames = batch.mask.shape[1]
        n_layers = len(self.teacher_states[int(batch.indices[0])])
        teacher = [_pad_stack([self.teacher_states[int(i)][k] for i in batch.indices], frames)
                   for k in range(n_layers)]
        feats = None
        if self.cache_features:
            feats = _pad_stack([self.features[int(i)] for i in batch.indices], frames)
        return teacher, feats


def _rng_state(streams):
    return json.dumps({k: rng.get_state(g) for k, g in sorted(streams.items())}, sort_keys=True)


def run_distillation(teacher_ckpt, run_config, model_config, objective, data_source, out_dir=None,
                     resume=None, extra_config=None, on_step=None):
    """Distill a student from ``teacher_ckpt`` for ``run_config.total_steps`` updates.

    ``data_source`` is a list of waveforms. ``resume`` is a checkpoint (or
    path) written by an earlier call with the same configuration; the run
    continues from its step. Returns a :class:`RunResult` whose trace holds
    one row per update performed by this call.
    """
    if not isinstance(objective, DistillObjective):
        raise ConfigError("objective must be a DistillObjective")
    if not isinstance(run_config, RunConfig):
        raise ConfigError("run_config must be a RunConfig")
    if not data_source:
        raise ConfigError("data source is empty")
    teacher = model_from_checkpoint(teacher_ckpt, trainable=False)
    teacher.aux, teacher.aux_specs = {}, ()

    seed = run_config.seed
    student = prepare_student(teacher, model_config, objective, seed)
    streams = {"n_of_m": rng.stream(seed, "n_of_m"), "dropout": rng.stream(seed, "dropout")}
    opt = AdamState()
    start = 0
    if resume is not None:
        ck = load_checkpoint(resume) if isinstance(resume, (str, os.PathLike)) else resume
        loaded = model_from_checkpoint(ck)
        if set(loaded.named_parameters()) != set(student.named_parameters()):
            raise ConfigError("resume checkpoint does not match the student layout")
        student = loaded
        opt = AdamState(ck.optimizer["t"], dict(ck.optimizer["m"]), dict(ck.optimizer["v"]))
        start = ck.step
        for name, state in json.loads(ck.rng_state).items():
            rng.set_state(streams[name], state)
    if run_config.freeze_frontend:
        student.set_trainable(False, prefix="frontend.")

    run_meta = {"run": run_config.to_dict(), "objective": objective.to_dict(),
                "teacher_model": teacher.config.to_dict()}
    run_meta.update(extra_config or {})
    cache = _ItemCache(teacher, student, data_source, run_config.freeze_frontend)
    dropout_rng = streams["dropout"] if model_config.dropout > 0 else None
    trainable = {n: p for n, p in student.named_parameters().items() if p.requires_grad}

    def snapshot(step):
        return model_checkpoint(student, run_meta, {"t": opt.t, "m": dict(opt.m), "v": dict(opt.v)},
                                step, _rng_state(streams))

    trace = []
    for step in range(start + 1, run_config.total_steps + 1):
        lr = lr_at(step, run_config)
        batch = batch_at(data_source, run_config.batch_size, seed, step - 1)
        teacher_states, feats = cache.batch(batch)
        try:
            if feats is not None:
                states = encoder_forward(student, Tensor(feats), batch.mask, dropout_rng)
            else:
                states = student(batch.waves, batch.lengths, dropout_rng)
            total, pred, l2l = objective.evaluate(student, states, teacher_states, batch.mask, streams["n_of_m"])
            student.zero_grad()
            backward(total)
            grads = {n: (p.grad if p.grad is not None else np.zeros_like(p.data)) for n, p in trainable.items()}
            check_finite(grads)
        except (NumericDomainError, TrainingAbort) as exc:
            raise TrainingAbort(f"step {step} (lr {lr:.6g}): {exc}") from exc
        grads, _ = clip_global_norm(grads, run_config.clip_norm)
        adam_step(trainable, grads, opt, lr, run_config.betas, run_config.eps)
        row = TraceRow(step, lr, total.item(), None if pred is None else pred.item(),
                       None if l2l is None else l2l.item())
        trace.append(row)
        if on_step is not None:
            on_step(row)
        if step % 50 == 0 or step == run_config.total_steps:
            log.info("step %d lr %.3g loss %.6f", step, lr, row.loss)
        if out_dir and run_config.checkpoint_every and step % run_config.checkpoint_every == 0:
            save_checkpoint(os.path.join(out_dir, f"step{step:07d}.dkd"), snapshot(step))

    final = snapshot(run_config.total_steps)
    if out_dir:
        save_checkpoint(os.path.join(out_dir, "final.dkd"), final)
        write_trace(os.path.join(out_dir, "trace.csv"), trace)
    return RunResult(final, trace, student)
