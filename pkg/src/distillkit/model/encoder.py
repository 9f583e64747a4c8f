"""Convolutional frontend + pre-norm self-attention stack."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from distillkit.errors import ConfigError, LengthError, ShapeError
from distillkit.model.config import ModelConfig, count_params, parameter_shapes
from distillkit.numerics import ops, rng
from distillkit.numerics.tensor import Tensor, as_tensor


@dataclass(frozen=True)
class AuxHeads:
    """Affine adapters from student width to teacher width.

    ``kind`` is ``prediction_heads`` (one head per teacher target layer, all
    reading the last student layer) or ``projection_layers`` (one per mapped
    student layer). ``layers`` holds teacher target layers for heads and
    student layers for projections, 1-based. Projections between equal widths
    are not built; ``identity`` records that case.
    """

    kind: str
    layers: tuple
    student_dim: int
    teacher_dim: int
    hidden: int = 0
    identity: bool = False

    def prefix(self, i):
        tag = "pred" if self.kind == "prediction_heads" else "proj"
        return f"aux.{tag}{self.layers[i]}"


class Encoder:
    """Parameters plus the auxiliary adapters attached for training.

    ``params`` maps names from :func:`parameter_shapes` to Tensors; ``aux``
    holds adapter parameters described by ``aux_specs``.
    """

    def __init__(self, config, params, aux=None, aux_specs=()):
        self.config = config
        self.params = params
        self.aux = dict(aux or {})
        self.aux_specs = tuple(aux_specs)

    def __getitem__(self, name):
        return self.params[name] if name in self.params else self.aux[name]

    def named_parameters(self, include_aux=True):
        out = dict(self.params)
        if include_aux:
            out.update(self.aux)
        return out

    def num_parameters(self, include_aux=True):
        return sum(p.size for p in self.named_parameters(include_aux).values())

    def set_trainable(self, flag, prefix=""):
        for name, p in self.named_parameters().items():
            if name.startswith(prefix):
                p.requires_grad = flag

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.grad = None

    def aux_spec(self, kind):
        for spec in self.aux_specs:
            if spec.kind == kind:
                return spec
        return None

    def __call__(self, wave, lengths=None, dropout_rng=None):
        feats = frontend_forward(self, wave, lengths)
        mask = None if lengths is None else frame_mask(self.config, lengths)
        return encoder_forward(self, feats, mask, dropout_rng)


def init_std(name, shape):
    """Initialization scale per parameter, following the HuBERT reference recipe.

    Frontend convs are He-normal, transformer linears use 0.02, the positional
    conv uses sqrt(4 / (kernel * dim)), everything else is fan-in scaled.
    """
    if name.startswith("frontend."):
        return math.sqrt(2.0 / math.prod(shape[1:]))
    if name.startswith("blocks."):
        return 0.02
    if name == "pos_conv.weight":
        return math.sqrt(4.0 / (shape[2] * shape[0]))
    fan_in = shape[0] if len(shape) == 2 else math.prod(shape[1:])
    return 1.0 / math.sqrt(fan_in)


def _init_param(name, shape, seed):
    if name.endswith(".gain"):
        return np.ones(shape)
    if name.endswith(".bias"):
        return np.zeros(shape)
    return rng.stream(seed, "init", name).normal(0.0, init_std(name, shape), size=shape)


def build_model(config, seed):
    if not isinstance(config, ModelConfig):
        raise ConfigError(f"build_model expects a ModelConfig, got {type(config).__name__}")
    params = {
        name: Tensor(_init_param(name, shape, seed), requires_grad=True, name=name)
        for name, shape in parameter_shapes(config)
    }
    return Encoder(config, params)


def frame_lengths(config, lengths):
    return np.array([config.frontend.output_length(int(n)) for n in lengths], dtype=np.int64)


def frame_mask(config, lengths):
    """(batch, frames) validity mask for waveforms of the given true lengths."""
    fl = frame_lengths(config, lengths)
    max_samples = int(max(lengths))
    total = config.frontend.output_length(max_samples)
    return np.arange(total)[None, :] < fl[:, None]


def frontend_forward(model, wave, lengths=None):
    """Raw waveform (batch, samples) -> frame features (batch, frames, channels)."""
    fe = model.config.frontend
    wave = as_tensor(wave)
    if wave.ndim != 2:
        raise ShapeError(f"waveform batch must be (batch, samples), got {wave.shape}")
    samples = wave.shape[1]
    shortest = samples if lengths is None else int(np.min(lengths))
    if shortest < fe.receptive_field:
        raise LengthError(f"waveform of {shortest} samples is shorter than the minimum {fe.receptive_field}")
    x = ops.reshape(wave, (wave.shape[0], 1, samples))
    for i, stride in enumerate(fe.strides):
        x = ops.conv1d(x, model.params[f"frontend.conv{i}.weight"], stride=stride)
        if i == 0:
            mask = None
            if lengths is not None:
                valid = np.array([(int(n) - fe.kernels[0]) // stride + 1 for n in lengths])
                mask = np.arange(x.shape[2])[None, :] < valid[:, None]
            x = ops.group_norm(x, model.params["frontend.norm0.gain"], model.params["frontend.norm0.bias"],
                               num_groups=fe.channels, mask=mask)
        x = ops.gelu(x)
    return ops.transpose(x, (0, 2, 1))


def _attention(model, p, h, key_mask):
    cfg = model.config
    batch, frames, d = h.shape
    heads, hd = cfg.n_heads, cfg.head_dim

    def split(name):
        t = ops.linear(h, model.params[p + name + ".weight"], model.params[p + name + ".bias"])
        return ops.transpose(ops.reshape(t, (batch, frames, heads, hd)), (0, 2, 1, 3))

    q, k, v = split("q"), split("k"), split("v")
    scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
    mask = None if key_mask is None else key_mask[:, None, None, :]
    ctx = ops.matmul(ops.softmax(scores, mask=mask), v)
    ctx = ops.reshape(ops.transpose(ctx, (0, 2, 1, 3)), (batch, frames, d))
    return ops.linear(ctx, model.params[p + "out.weight"], model.params[p + "out.bias"])


def encoder_forward(model, frames, mask=None, dropout_rng=None):
    """Frame features -> hidden state after every transformer block (1..n_layers)."""
    cfg = model.config
    P = model.params
    frames = as_tensor(frames)
    if frames.ndim != 3 or frames.shape[-1] != cfg.frontend.channels:
        raise ShapeError(
            f"encoder expects (batch, frames, {cfg.frontend.channels}) features, got {frames.shape}"
        )
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != frames.shape[:2]:
            raise ShapeError(f"frame mask {mask.shape} does not match features {frames.shape[:2]}")
    rate = cfg.dropout if dropout_rng is not None else 0.0

    x = ops.layer_norm(frames, P["feature_norm.gain"], P["feature_norm.bias"])
    x = ops.linear(x, P["proj.weight"], P["proj.bias"])
    if mask is not None:
        # padded frames must look like the zero padding an unpadded item sees
        x = ops.mul(x, Tensor(mask[..., None].astype(np.float64)))
    n = x.shape[1]
    k = cfg.pos_conv_kernel
    pos = ops.conv1d(ops.transpose(x, (0, 2, 1)), P["pos_conv.weight"], P["pos_conv.bias"],
                     groups=cfg.pos_conv_groups, padding=k // 2)
    pos = ops.gelu(ops.crop(pos, 2, 0, n))
    x = ops.add(x, ops.transpose(pos, (0, 2, 1)))
    x = ops.layer_norm(x, P["encoder_norm.gain"], P["encoder_norm.bias"])

    states = []
    for i in range(cfg.n_layers):
        p = f"blocks.{i}."
        h = ops.layer_norm(x, P[p + "attn_norm.gain"], P[p + "attn_norm.bias"])
        x = ops.add(x, ops.dropout(_attention(model, p, h, mask), rate, dropout_rng))
        h = ops.layer_norm(x, P[p + "ffn_norm.gain"], P[p + "ffn_norm.bias"])
        h = ops.gelu(ops.linear(h, P[p + "ffn1.weight"], P[p + "ffn1.bias"]))
        h = ops.linear(h, P[p + "ffn2.weight"], P[p + "ffn2.bias"])
        x = ops.add(x, ops.dropout(h, rate, dropout_rng))
        states.append(x)
    return states


# -- auxiliary adapters --------------------------------------------------------

def _affine(aux, prefix, in_dim, out_dim, hidden, seed):
    dims = [in_dim, out_dim] if not hidden else [in_dim, hidden, out_dim]
    for j in range(len(dims) - 1):
        w = f"{prefix}.fc{j}.weight"
        b = f"{prefix}.fc{j}.bias"
        aux[w] = Tensor(_init_param(w, (dims[j], dims[j + 1]), seed), requires_grad=True, name=w)
        aux[b] = Tensor(np.zeros(dims[j + 1]), requires_grad=True, name=b)


def attach_prediction_heads(model, teacher_dim, targets, seed, hidden=0):
    """One head per teacher target layer on top of the last student layer."""
    targets = tuple(int(t) for t in targets)
    if not targets:
        raise ConfigError("prediction heads need at least one teacher target layer")
    spec = AuxHeads("prediction_heads", targets, model.config.embed_dim, teacher_dim, hidden)
    aux = dict(model.aux)
    for i in range(len(targets)):
        _affine(aux, spec.prefix(i), spec.student_dim, teacher_dim, hidden, seed)
    specs = tuple(s for s in model.aux_specs if s.kind != spec.kind) + (spec,)
    return Encoder(model.config, model.params, aux, specs)


def attach_projections(model, teacher_dim, student_layers, seed):
    """Projection per mapped student layer; none are built when widths already agree."""
    layers = tuple(int(s) for s in student_layers)
    same = model.config.embed_dim == teacher_dim
    spec = AuxHeads("projection_layers", layers, model.config.embed_dim, teacher_dim, identity=same)
    aux = dict(model.aux)
    if not same:
        for i in range(len(layers)):
            _affine(aux, spec.prefix(i), spec.student_dim, teacher_dim, 0, seed)
    specs = tuple(s for s in model.aux_specs if s.kind != spec.kind) + (spec,)
    return Encoder(model.config, model.params, aux, specs)


def apply_adapter(model, spec, i, x):
    """Run adapter ``i`` of ``spec`` on a (batch, frames, student_dim) state."""
    if spec.identity:
        return x
    prefix = spec.prefix(i)
    n = 2 if spec.hidden else 1
    for j in range(n):
        x = ops.linear(x, model.aux[f"{prefix}.fc{j}.weight"], model.aux[f"{prefix}.fc{j}.bias"])
        if j < n - 1:
            x = ops.gelu(x)
    return x


def strip_aux(model):
    """Evaluation view of a model: same encoder tensors, no heads or projections."""
    return Encoder(model.config, model.params)


def describe(model):
    return {
        "config": model.config.name,
        "encoder_params": count_params(model.config),
        "aux_params": model.num_parameters() - model.num_parameters(include_aux=False),
        "aux": [s.kind for s in model.aux_specs],
    }
