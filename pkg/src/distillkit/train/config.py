"""Run configuration: schedule, optimizer, objective and the YAML run file."""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, fields

import yaml

from distillkit.distill.mapping import parse_targets
from distillkit.distill.objectives import KD_KINDS, DistillObjective
from distillkit.errors import ConfigError
from distillkit.model.config import PRESETS, ModelConfig, get_preset


@dataclass(frozen=True)
class RunConfig:
    total_steps: int = 200_000
    batch_size: int = 24
    peak_lr: float = 2e-4
    warmup_fraction: float = 0.07
    betas: tuple = (0.9, 0.98)
    eps: float = 1e-6
    seed: int = 0
    checkpoint_every: int = 0
    init_lr: float = 0.0
    final_lr: float = 0.0
    clip_norm: float = 0.0
    freeze_frontend: bool = False

    def __post_init__(self):
        problems = validate_run(asdict(self))
        if problems:
            raise ConfigError("run config: " + "; ".join(problems))

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


def validate_run(d):
    problems = []
    if not isinstance(d.get("total_steps"), int) or d["total_steps"] < 1:
        problems.append(f"run.total_steps must be an integer >= 1, got {d.get('total_steps')!r}")
    if not isinstance(d.get("batch_size"), int) or d["batch_size"] < 1:
        problems.append(f"run.batch_size must be an integer >= 1, got {d.get('batch_size')!r}")
    if not isinstance(d.get("peak_lr"), (int, float)) or d["peak_lr"] <= 0:
        problems.append(f"run.peak_lr must be > 0, got {d.get('peak_lr')!r}")
    wf = d.get("warmup_fraction")
    if not isinstance(wf, (int, float)) or not 0 < wf < 1:
        problems.append(f"run.warmup_fraction must lie in (0, 1), got {wf!r}")
    betas = d.get("betas")
    if not isinstance(betas, (list, tuple)) or len(betas) != 2 or not all(0 <= b < 1 for b in betas):
        problems.append(f"run.betas must be two numbers in [0, 1), got {betas!r}")
    for key in ("eps", "init_lr", "final_lr", "clip_norm"):
        v = d.get(key)
        if not isinstance(v, (int, float)) or v < 0:
            problems.append(f"run.{key} must be a number >= 0, got {v!r}")
    if not isinstance(d.get("checkpoint_every"), int) or d["checkpoint_every"] < 0:
        problems.append(f"run.checkpoint_every must be an integer >= 0, got {d.get('checkpoint_every')!r}")
    return problems


def build_objective(kd, student_depth, teacher_depth):
    """Objective from a ``kd`` mapping (kind, lambda_cos, pred_weight, targets, l2l_targets)."""
    kind = kd.get("kind", "pred")
    if kind not in KD_KINDS:
        raise ConfigError(f"kd.kind must be one of {KD_KINDS}, got {kind!r}")
    common = {"lambda_cos": float(kd.get("lambda_cos", 1.0)), "head_hidden": int(kd.get("head_hidden", 0))}
    targets = kd.get("targets")
    if kind == "pred":
        return DistillObjective("pred", pred_targets=parse_targets(targets, student_depth, teacher_depth, "pred"),
                                **common)
    if kind == "pred_all":
        return DistillObjective("pred", pred_targets=parse_targets("all", student_depth, teacher_depth, "pred"),
                                **common)
    if kind == "l2l":
        return DistillObjective("l2l", l2l_mapping=parse_targets(targets, student_depth, teacher_depth, "l2l"),
                                **common)
    if kind == "l2l_n_of_m":
        return DistillObjective("l2l", l2l_mapping=parse_targets("n_of_m", student_depth, teacher_depth, "l2l"),
                                **common)
    return DistillObjective(
        "combined",
        pred_targets=parse_targets(targets, student_depth, teacher_depth, "pred"),
        l2l_mapping=parse_targets(kd.get("l2l_targets"), student_depth, teacher_depth, "l2l"),
        pred_weight=float(kd.get("pred_weight", 0.8)),
        **common,
    )


# -- run files --------------------------------------------------------------

SECTIONS = {
    "teacher": {"path", "preset", "seed", "model"},
    "student": {"preset", "name", "n_layers", "embed_dim", "ffn_dim", "n_heads", "dropout",
                "pos_conv_kernel", "pos_conv_groups"},
    "run": {f.name for f in fields(RunConfig)},
    "kd": {"kind", "lambda_cos", "pred_weight", "targets", "l2l_targets", "head_hidden"},
    "data": {"synth", "manifest"},
}

DEFAULT_STUDENT = "6l-half"

DEFAULTS = {
    "teacher": {"preset": None, "path": None, "seed": 0},
    "student": {},
    "run": RunConfig().to_dict(),
    "kd": {"kind": "pred"},
    "data": {},
}


def _run_presets():
    out = {}
    for student in ("distilhubert", "12l-half", "12l-fourth", "3l-one", "3l-half", "6l-half"):
        for kind in KD_KINDS:
            for teacher, suffix in (("base", ""), ("large", "-large")):
                out[f"{student}-{kind}{suffix}"] = {
                    "teacher": {"preset": teacher},
                    "student": {"preset": student},
                    "kd": {"kind": kind},
                }
    return out


RUN_PRESETS = _run_presets()


def parse_override(text):
    if "=" not in text:
        raise ConfigError(f"--set expects key=value, got {text!r}")
    key, value = text.split("=", 1)
    parsed = yaml.safe_load(value)
    if ":" in value and not isinstance(parsed, str):
        parsed = value.strip()  # YAML 1.1 would read 7:8:1:1 as a base-60 integer
    return key.strip(), parsed


def apply_overrides(raw, overrides):
    raw = copy.deepcopy(raw)
    for key, value in overrides:
        parts = key.split(".")
        node = raw
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: {p} is not a section")
        node[parts[-1]] = value
    return raw


def merge(base, top):
    out = copy.deepcopy(base)
    for k, v in (top or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ResolvedRun:
    raw: dict
    teacher_path: str | None
    teacher_model: ModelConfig | None
    teacher_seed: int
    student: ModelConfig
    run: RunConfig
    kd: dict
    data: dict

    def objective(self, teacher_depth):
        return build_objective(self.kd, self.student.n_layers, teacher_depth)


def _model_from_section(section, where, problems):
    section = dict(section or {})
    preset = section.pop("preset", None)
    try:
        base = get_preset(preset).to_dict() if preset else {}
    except ConfigError as exc:
        problems.append(f"{where}.preset: {exc}")
        return None
    base.update({k: v for k, v in section.items() if v is not None})
    base.setdefault("name", f"custom-{where}")
    try:
        return ModelConfig.from_dict(base)
    except (ConfigError, TypeError) as exc:
        problems.append(f"{where}: {exc}")
        return None


def resolve_run(raw):
    """Validate a merged run mapping; every problem is reported in one ConfigError."""
    problems = []
    for section, value in raw.items():
        if section not in SECTIONS:
            problems.append(f"unknown section {section!r}")
            continue
        if not isinstance(value, dict):
            problems.append(f"section {section!r} must be a mapping")
            continue
        for key in value:
            if key not in SECTIONS[section]:
                problems.append(f"unknown key {section}.{key}")
    teacher = raw.get("teacher", {}) or {}
    teacher_model = None
    if teacher.get("model"):
        teacher_model = _model_from_section(teacher["model"], "teacher.model", problems)
    elif teacher.get("preset"):
        teacher_model = _model_from_section({"preset": teacher["preset"]}, "teacher", problems)
    if not teacher.get("path") and teacher_model is None:
        problems.append("teacher.path or teacher.preset is required")
    student_section = raw.get("student") or {"preset": DEFAULT_STUDENT}
    student = _model_from_section(student_section, "student", problems)
    run_d = dict(raw.get("run", {}))
    if isinstance(run_d.get("betas"), list):
        run_d["betas"] = tuple(run_d["betas"])
    run_problems = validate_run(run_d)
    problems += run_problems
    kd = raw.get("kd", {}) or {}
    if kd.get("kind", "pred") not in KD_KINDS:
        problems.append(f"kd.kind must be one of {KD_KINDS}, got {kd.get('kind')!r}")
    if "lambda_cos" in kd and (not isinstance(kd["lambda_cos"], (int, float)) or kd["lambda_cos"] < 0):
        problems.append(f"kd.lambda_cos must be >= 0, got {kd['lambda_cos']!r}")
    if "pred_weight" in kd and (not isinstance(kd["pred_weight"], (int, float)) or not 0 <= kd["pred_weight"] <= 1):
        problems.append(f"kd.pred_weight must lie in [0, 1], got {kd['pred_weight']!r}")
    data = raw.get("data", {}) or {}
    if problems:
        raise ConfigError("invalid run config:\n  " + "\n  ".join(problems))
    run = RunConfig(**{k: v for k, v in run_d.items() if k in SECTIONS["run"]})
    return ResolvedRun(raw, teacher.get("path"), teacher_model, int(teacher.get("seed", 0)), student, run, kd, data)


def load_run_file(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    return data


__all__ = [
    "DEFAULTS", "PRESETS", "RUN_PRESETS", "ResolvedRun", "RunConfig", "apply_overrides", "build_objective",
    "load_run_file", "merge", "parse_override", "resolve_run",
]
