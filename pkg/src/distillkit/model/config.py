"""Architecture descriptions and the preset model family."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import yaml

from distillkit.errors import ConfigError

FRONTEND_KERNELS = (10, 3, 3, 3, 3, 2, 2)
FRONTEND_STRIDES = (5, 2, 2, 2, 2, 2, 2)


@dataclass(frozen=True)
class ConvFrontendSpec:
    channels: int = 512
    kernels: tuple = FRONTEND_KERNELS
    strides: tuple = FRONTEND_STRIDES

    def __post_init__(self):
        if len(self.kernels) != 7 or len(self.strides) != 7:
            raise ConfigError("the convolutional frontend has exactly 7 layers")

    @property
    def total_stride(self):
        return math.prod(self.strides)

    @property
    def receptive_field(self):
        rf, jump = 1, 1
        for k, s in zip(self.kernels, self.strides):
            rf += (k - 1) * jump
            jump *= s
        return rf

    def layer_lengths(self, samples):
        """Output length after each conv layer for an input of ``samples``."""
        lengths = []
        n = samples
        for k, s in zip(self.kernels, self.strides):
            n = (n - k) // s + 1
            lengths.append(n)
        return lengths

    def output_length(self, samples):
        if samples < self.receptive_field:
            return 0
        return self.layer_lengths(samples)[-1]


@dataclass(frozen=True)
class ModelConfig:
    name: str
    n_layers: int
    embed_dim: int
    ffn_dim: int
    n_heads: int
    frontend: ConvFrontendSpec = field(default_factory=ConvFrontendSpec)
    pos_conv_kernel: int = 128
    pos_conv_groups: int = 16
    dropout: float = 0.0

    def __post_init__(self):
        problems = []
        for key in ("n_layers", "embed_dim", "ffn_dim", "n_heads"):
            v = getattr(self, key)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                problems.append(f"{key} must be a positive integer, got {v!r}")
        if not problems and self.embed_dim % self.n_heads:
            problems.append(f"embed_dim {self.embed_dim} is not divisible by n_heads {self.n_heads}")
        if isinstance(self.embed_dim, int) and self.embed_dim % self.pos_conv_groups:
            problems.append(f"embed_dim {self.embed_dim} is not divisible by pos_conv_groups {self.pos_conv_groups}")
        if not 0.0 <= self.dropout < 1.0:
            problems.append(f"dropout must be in [0, 1), got {self.dropout}")
        if problems:
            raise ConfigError(f"model config {self.name!r}: " + "; ".join(problems))

    @property
    def head_dim(self):
        return self.embed_dim // self.n_heads

    def to_dict(self):
        d = asdict(self)
        d["frontend"] = {k: list(v) if isinstance(v, tuple) else v for k, v in d["frontend"].items()}
        return d

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        allowed = {"name", "n_layers", "embed_dim", "ffn_dim", "n_heads", "frontend",
                   "pos_conv_kernel", "pos_conv_groups", "dropout"}
        unknown = sorted(set(data) - allowed)
        missing = sorted({"name", "n_layers", "embed_dim", "ffn_dim", "n_heads"} - set(data))
        if unknown or missing:
            parts = [f"unknown key {k!r}" for k in unknown] + [f"missing key {k!r}" for k in missing]
            raise ConfigError("model config: " + "; ".join(parts))
        fe = data.pop("frontend", None)
        if isinstance(fe, dict):
            data["frontend"] = ConvFrontendSpec(
                channels=int(fe.get("channels", 512)),
                kernels=tuple(fe.get("kernels", FRONTEND_KERNELS)),
                strides=tuple(fe.get("strides", FRONTEND_STRIDES)),
            )
        return cls(**data)


PRESETS = {
    "base": ModelConfig("HuBERT BASE", 12, 768, 3072, 12),
    "large": ModelConfig("HuBERT LARGE", 24, 1024, 4096, 16),
    "distilhubert": ModelConfig("DistilHuBERT", 2, 768, 3072, 12),
    "12l-half": ModelConfig("12-L HALF", 12, 384, 1536, 6),
    "12l-fourth": ModelConfig("12-L FOURTH", 12, 192, 768, 3),
    "3l-one": ModelConfig("3-L ONE", 3, 768, 3072, 12),
    "3l-half": ModelConfig("3-L HALF", 3, 384, 1536, 6),
    "6l-half": ModelConfig("6-L HALF", 6, 384, 1536, 6),
}

# Published "#Params" figures, in parameters.
PUBLISHED_PARAMS = {
    "base": 94.68e6,
    "large": 316.61e6,
    "distilhubert": 23.49e6,
    "12l-half": 26.87e6,
    "12l-fourth": 9.93e6,
    "3l-one": 30.58e6,
    "3l-half": 10.90e6,
    "6l-half": 16.23e6,
}


def get_preset(name):
    key = name.strip().lower()
    if key not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}")
    return PRESETS[key]


def load_model_config(path):
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping of model settings")
    if "model" in data and isinstance(data["model"], dict):
        data = data["model"]
    return ModelConfig.from_dict(data)


def parameter_shapes(config):
    """Ordered (name, shape) pairs of every encoder parameter, auxiliary heads excluded."""
    fe = config.frontend
    d, f = config.embed_dim, config.ffn_dim
    shapes = []
    c_in = 1
    for i, k in enumerate(fe.kernels):
        shapes.append((f"frontend.conv{i}.weight", (fe.channels, c_in, k)))
        if i == 0:
            shapes.append(("frontend.norm0.gain", (fe.channels,)))
            shapes.append(("frontend.norm0.bias", (fe.channels,)))
        c_in = fe.channels
    shapes += [
        ("feature_norm.gain", (fe.channels,)),
        ("feature_norm.bias", (fe.channels,)),
        ("proj.weight", (fe.channels, d)),
        ("proj.bias", (d,)),
        ("pos_conv.weight", (d, d // config.pos_conv_groups, config.pos_conv_kernel)),
        ("pos_conv.bias", (d,)),
        ("encoder_norm.gain", (d,)),
        ("encoder_norm.bias", (d,)),
    ]
    for i in range(config.n_layers):
        p = f"blocks.{i}."
        shapes += [(p + "attn_norm.gain", (d,)), (p + "attn_norm.bias", (d,))]
        for m in ("q", "k", "v", "out"):
            shapes += [(p + f"{m}.weight", (d, d)), (p + f"{m}.bias", (d,))]
        shapes += [
            (p + "ffn_norm.gain", (d,)),
            (p + "ffn_norm.bias", (d,)),
            (p + "ffn1.weight", (d, f)),
            (p + "ffn1.bias", (f,)),
            (p + "ffn2.weight", (f, d)),
            (p + "ffn2.bias", (d,)),
        ]
    return shapes


def count_params(config):
    """Exact encoder parameter count; prediction heads and projections are not included."""
    return sum(math.prod(shape) for _, shape in parameter_shapes(config))
