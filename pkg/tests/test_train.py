import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distillkit.data import synth_corpus
from distillkit.distill import DistillObjective, MappingStrategy, default_pred_strategy
from distillkit.errors import ConfigError, ContractError, TrainingAbort
from distillkit.model import build_model
from distillkit.numerics import Tensor
from distillkit.train import (
    AdamState,
    RunConfig,
    adam_step,
    init_student,
    load_checkpoint,
    lr_at,
    model_checkpoint,
    model_from_checkpoint,
    read_trace,
    resolve_run,
    run_distillation,
    save_checkpoint,
    warmup_end,
)
from distillkit.train.checkpoint import CheckpointError, from_bytes, to_bytes
from distillkit.train.config import DEFAULTS, apply_overrides, merge, parse_override
from distillkit.train.optim import clip_global_norm

from conftest import toy_config

PAPER_RUN = RunConfig()  # 200k updates, peak 2e-4, 7% warmup


# -- schedule -------------------------------------------------------------------

def test_schedule_reference_points():
    assert warmup_end(PAPER_RUN) == 14_000
    assert lr_at(0, PAPER_RUN) == 0.0
    assert lr_at(14_000, PAPER_RUN) == 2e-4
    assert lr_at(7_000, PAPER_RUN) == pytest.approx(1e-4, rel=1e-12)
    assert lr_at(107_000, PAPER_RUN) == pytest.approx(1e-4, rel=1e-12)
    assert lr_at(200_000, PAPER_RUN) == 0.0


def test_schedule_floors():
    cfg = RunConfig(total_steps=100, peak_lr=1.0, warmup_fraction=0.1, init_lr=0.1, final_lr=0.2)
    assert lr_at(0, cfg) == pytest.approx(0.1)
    assert lr_at(100, cfg) == pytest.approx(0.2)


def test_schedule_range_checked():
    with pytest.raises(ContractError):
        lr_at(-1, PAPER_RUN)
    with pytest.raises(ContractError):
        lr_at(200_001, PAPER_RUN)


@settings(max_examples=50, deadline=None)
@given(st.integers(10, 5000), st.floats(0.01, 0.9))
def test_schedule_shape(total, frac):
    cfg = RunConfig(total_steps=total, warmup_fraction=frac, peak_lr=1e-3)
    w = warmup_end(cfg)
    lrs = np.array([lr_at(s, cfg) for s in range(total + 1)])
    assert lrs.max() == cfg.peak_lr and np.argmax(lrs) == w
    assert np.all(np.diff(lrs[: w + 1]) >= 0) and np.all(np.diff(lrs[w:]) <= 0)
    assert np.all(np.abs(np.diff(lrs)) <= cfg.peak_lr / min(max(w, 1), total - w) + 1e-15)


# -- optimizer ------------------------------------------------------------------

def test_adam_first_step_closed_form():
    p = {"w": Tensor(np.array([0.5, -1.0]))}
    g = {"w": np.array([0.2, -3.0])}
    adam_step(p, g, AdamState(), lr=1e-3, betas=(0.9, 0.98), eps=1e-6)
    expect = np.array([0.5, -1.0]) - 1e-3 * g["w"] / (np.abs(g["w"]) + 1e-6)
    assert np.allclose(p["w"].data, expect, atol=1e-15)


def test_adam_two_steps_reference():
    # hand-rolled reference for two bias-corrected updates
    b1, b2, eps, lr = 0.9, 0.98, 1e-6, 0.01
    p = {"w": Tensor(np.array([1.0]))}
    st_ = AdamState()
    grads = [np.array([0.5]), np.array([-0.25])]
    w, m, v = 1.0, 0.0, 0.0
    for t, g in enumerate(grads, 1):
        adam_step(p, {"w": g}, st_, lr, (b1, b2), eps)
        m = b1 * m + (1 - b1) * g[0]
        v = b2 * v + (1 - b2) * g[0] ** 2
        w -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    assert p["w"].data[0] == pytest.approx(w, abs=1e-15)


def test_adam_zero_lr_leaves_params_untouched():
    data = np.random.default_rng(0).standard_normal(5)
    p = {"w": Tensor(data.copy())}
    adam_step(p, {"w": np.ones(5)}, AdamState(), lr=0.0)
    assert p["w"].data.tobytes() == data.tobytes()


def test_adam_rejects_nonfinite_gradient():
    p = {"blocks.0.q.weight": Tensor(np.zeros(2))}
    with pytest.raises(TrainingAbort, match="blocks.0.q.weight"):
        adam_step(p, {"blocks.0.q.weight": np.array([1.0, np.nan])}, AdamState(), lr=1e-3)


def test_clip_global_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = clip_global_norm(grads, 1.0)
    assert norm == 5.0
    assert np.allclose([clipped["a"][0], clipped["b"][0]], [0.6, 0.8])
    same, _ = clip_global_norm(grads, 0.0)
    assert same is grads


# -- checkpoints ------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    model = build_model(toy_config(16), 0)
    ck = model_checkpoint(model, {"note": "x"}, {"t": 3, "m": {"proj.weight": np.ones((2, 2))}, "v": {}}, 7,
                          '{"dropout": "s"}')
    path = tmp_path / "a.dkd"
    save_checkpoint(path, ck)
    back = load_checkpoint(path)
    assert back.step == 7 and back.rng_state == '{"dropout": "s"}'
    assert back.config["note"] == "x"
    for name, arr in ck.params.items():
        assert back.params[name].tobytes() == arr.tobytes()
    assert to_bytes(back) == to_bytes(ck)
    m = model_from_checkpoint(back)
    assert m.config == model.config


def test_checkpoint_rejects_garbage(tmp_path):
    with pytest.raises(CheckpointError):
        from_bytes(b"NOPE" + b"\0" * 20)
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "missing.dkd")


# -- student init -----------------------------------------------------------------

def test_init_student_copies_frontend_only():
    teacher = build_model(toy_config(16), 0)
    student = init_student(teacher, toy_config(16), seed=5)
    for name, p in student.params.items():
        same = np.array_equal(p.data, teacher.params[name].data)
        if name.startswith("frontend."):
            assert same and p is not teacher.params[name]
        elif name.endswith("weight"):
            assert not same


# -- loop -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_setup():
    teacher = build_model(toy_config(16), 1)
    corpus = synth_corpus(2, 6, 0.03, 0.06)
    obj = DistillObjective("pred", pred_targets=MappingStrategy("explicit", 2, 2, indices=(1, 2), purpose="pred"))
    return model_checkpoint(teacher), corpus, obj


def run_cfg(**kw):
    base = dict(total_steps=6, batch_size=3, peak_lr=1e-3, seed=4, checkpoint_every=3)
    base.update(kw)
    return RunConfig(**base)


def test_loop_deterministic_and_teacher_untouched(tiny_setup, tmp_path):
    ck, corpus, obj = tiny_setup
    before = {k: v.tobytes() for k, v in ck.params.items()}
    a = run_distillation(ck, run_cfg(), toy_config(16), obj, corpus, out_dir=str(tmp_path))
    b = run_distillation(ck, run_cfg(), toy_config(16), obj, corpus)
    assert [r.loss for r in a.trace] == [r.loss for r in b.trace]
    assert to_bytes(a.checkpoint) == to_bytes(b.checkpoint)
    assert {k: v.tobytes() for k, v in ck.params.items()} == before
    assert [r.step for r in read_trace(tmp_path / "trace.csv")] == list(range(1, 7))
    assert read_trace(tmp_path / "trace.csv")[-1].loss == a.trace[-1].loss
    assert sorted(os.listdir(tmp_path)) == ["final.dkd", "step0000003.dkd", "step0000006.dkd", "trace.csv"]


def test_loop_resume_matches(tiny_setup, tmp_path):
    ck, corpus, obj = tiny_setup
    full = run_distillation(ck, run_cfg(), toy_config(16), obj, corpus, out_dir=str(tmp_path))
    tail = run_distillation(ck, run_cfg(), toy_config(16), obj, corpus, resume=str(tmp_path / "step0000003.dkd"))
    assert [r.loss for r in tail.trace] == [r.loss for r in full.trace[3:]]
    assert to_bytes(tail.checkpoint) == to_bytes(full.checkpoint)


def test_loop_frozen_frontend_stays_put(tiny_setup):
    ck, corpus, obj = tiny_setup
    res = run_distillation(ck, run_cfg(freeze_frontend=True, total_steps=2), toy_config(16), obj, corpus)
    for name, arr in res.checkpoint.params.items():
        if name.startswith("frontend."):
            assert arr.tobytes() == ck.params[name].tobytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_loop_nan_aborts_with_step(tiny_setup):
    ck, corpus, obj = tiny_setup
    with pytest.raises(TrainingAbort, match=r"step \d+ \(lr"):
        run_distillation(ck, run_cfg(peak_lr=1e300, total_steps=4, warmup_fraction=0.3), toy_config(16), obj, corpus)


def test_loop_input_errors(tiny_setup):
    ck, corpus, obj = tiny_setup
    with pytest.raises(ConfigError):
        run_distillation(ck, run_cfg(), toy_config(16), obj, [])
    with pytest.raises(ConfigError):
        run_distillation(ck, {"total_steps": 3}, toy_config(16), obj, corpus)


# -- run config ---------------------------------------------------------------------

def test_run_config_validation():
    with pytest.raises(ConfigError):
        RunConfig(total_steps=0)
    with pytest.raises(ConfigError):
        RunConfig(warmup_fraction=1.5)


def test_resolve_reports_every_problem():
    raw = merge(DEFAULTS, {"teacher": {"preset": "base"}, "run": {"batch_size": 0, "peak_lr": -1},
                           "kd": {"kind": "magic"}, "extra": {}})
    with pytest.raises(ConfigError) as exc:
        resolve_run(raw)
    msg = str(exc.value)
    for needle in ("batch_size", "peak_lr", "kd.kind", "extra"):
        assert needle in msg


def test_resolve_presets_and_overrides():
    raw = merge(DEFAULTS, {"teacher": {"preset": "base"}, "student": {"preset": "3l-half"}, "kd": {"kind": "l2l"}})
    raw = apply_overrides(raw, [parse_override("run.total_steps=10"), parse_override("data.synth=1:2:0.1:0.2")])
    r = resolve_run(raw)
    assert r.run.total_steps == 10 and r.data["synth"] == "1:2:0.1:0.2"
    obj = r.objective(12)
    assert obj.l2l_mapping.kind == "stride" and obj.l2l_mapping.stride == 4
    default = resolve_run(merge(DEFAULTS, {"teacher": {"preset": "base"}}))
    assert default.student.n_layers == 6
    assert default.objective(12).pred_targets == default_pred_strategy(6, 12)
