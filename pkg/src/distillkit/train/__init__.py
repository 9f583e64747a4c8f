from distillkit.train.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from distillkit.train.config import RUN_PRESETS, RunConfig, build_objective, resolve_run
from distillkit.train.loop import (
    RunResult,
    TraceRow,
    init_student,
    model_checkpoint,
    model_from_checkpoint,
    prepare_student,
    read_trace,
    run_distillation,
    write_trace,
)
from distillkit.train.optim import AdamState, adam_step
from distillkit.train.schedule import lr_at, warmup_end

__all__ = [
    "RUN_PRESETS", "AdamState", "Checkpoint", "RunConfig", "RunResult", "TraceRow", "adam_step",
    "build_objective", "init_student", "load_checkpoint", "lr_at", "model_checkpoint", "model_from_checkpoint",
    "prepare_student", "read_trace", "resolve_run", "run_distillation", "save_checkpoint", "warmup_end",
    "write_trace",
]
