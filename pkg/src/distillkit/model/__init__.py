from distillkit.model.config import (
    PRESETS,
    PUBLISHED_PARAMS,
    ConvFrontendSpec,
    ModelConfig,
    count_params,
    get_preset,
    load_model_config,
    parameter_shapes,
)
from distillkit.model.encoder import (
    AuxHeads,
    Encoder,
    apply_adapter,
    attach_prediction_heads,
    attach_projections,
    build_model,
    encoder_forward,
    frame_lengths,
    frame_mask,
    frontend_forward,
    strip_aux,
)

__all__ = [
    "PRESETS", "PUBLISHED_PARAMS", "AuxHeads", "ConvFrontendSpec", "Encoder", "ModelConfig",
    "apply_adapter", "attach_prediction_heads", "attach_projections", "build_model", "count_params",
    "encoder_forward", "frame_lengths", "frame_mask", "frontend_forward", "get_preset",
    "load_model_config", "parameter_shapes", "strip_aux",
]
