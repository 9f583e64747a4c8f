from distillkit.distill.mapping import (
    LayerMap,
    MappingStrategy,
    default_l2l_strategy,
    default_pred_strategy,
    parse_targets,
    realize_mapping,
)
from distillkit.distill.objectives import (
    KD_KINDS,
    DistillObjective,
    combined_objective,
    l2l_loss,
    l2l_objective,
    pair_loss,
    pred_loss,
    pred_objective,
)

__all__ = [
    "KD_KINDS", "DistillObjective", "LayerMap", "MappingStrategy", "combined_objective",
    "default_l2l_strategy", "default_pred_strategy", "l2l_loss", "l2l_objective", "pair_loss",
    "parse_targets", "pred_loss", "pred_objective", "realize_mapping",
]
