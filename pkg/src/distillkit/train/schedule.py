"""Linear warmup then linear decay of the learning rate."""
from __future__ import annotations

from distillkit.errors import ContractError


def warmup_end(config):
    return int(round(config.warmup_fraction * config.total_steps))


def lr_at(step, config):
    """Learning rate at update ``step`` (0 <= step <= total_steps).

    Rises linearly from ``init_lr`` to ``peak_lr`` over the first
    ``warmup_fraction`` of updates, then falls linearly to ``final_lr``.
    """
    total = config.total_steps
    if not 0 <= step <= total:
        raise ContractError(f"step {step} outside [0, {total}]")
    peak = config.peak_lr
    w = warmup_end(config)
    if step <= w:
        if w == 0:
            return peak
        if step == w:
            return peak
        return config.init_lr + (peak - config.init_lr) * (step / w)
    return config.final_lr + (peak - config.final_lr) * ((total - step) / (total - w))
