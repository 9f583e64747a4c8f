"""Pairing of student layers with teacher layers."""
from __future__ import annotations

from dataclasses import dataclass


from distillkit.errors import ConfigError

KINDS = ("all_layers", "stride", "explicit", "random_n_of_m")


@dataclass(frozen=True)
class MappingStrategy:
    """Rule for choosing teacher layers.

    ``purpose`` is ``l2l`` (one teacher layer per student layer) or ``pred``
    (any number of teacher layers, all read from the last student layer).
    ``n`` is the draw size for ``random_n_of_m`` under ``pred``; under ``l2l``
    it is always the student depth.
    """

    kind: str
    teacher_depth: int
    student_depth: int
    stride: int = 0
    indices: tuple = ()
    n: int = 0
    purpose: str = "l2l"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown mapping kind {self.kind!r}; expected one of {KINDS}")
        if self.purpose not in ("l2l", "pred"):
            raise ConfigError(f"mapping purpose must be 'l2l' or 'pred', got {self.purpose!r}")
        if self.student_depth < 1 or self.teacher_depth < 1:
            raise ConfigError("depths must be positive")
        if self.purpose == "l2l" and self.student_depth > self.teacher_depth:
            raise ConfigError(
                f"a {self.student_depth}-layer student cannot map onto a {self.teacher_depth}-layer teacher"
            )

    @property
    def is_random(self):
        return self.kind == "random_n_of_m"


@dataclass(frozen=True)
class LayerMap:
    pairs: tuple  # ((student_layer, teacher_layer), ...), 1-based

    @property
    def student_layers(self):
        return tuple(s for s, _ in self.pairs)

    @property
    def teacher_layers(self):
        return tuple(t for _, t in self.pairs)

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)


def _teacher_indices(strategy, rng):
    m = strategy.teacher_depth
    if strategy.kind == "all_layers":
        return list(range(1, m + 1))
    if strategy.kind == "stride":
        if strategy.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {strategy.stride}")
        return list(range(strategy.stride, m + 1, strategy.stride))
    if strategy.kind == "explicit":
        idx = [int(i) for i in strategy.indices]
        bad = [i for i in idx if not 1 <= i <= m]
        if bad:
            raise ConfigError(f"teacher layers {bad} are outside 1..{m}")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ConfigError(f"explicit teacher layers must be strictly increasing, got {idx}")
        return idx
    n = strategy.student_depth if strategy.purpose == "l2l" else strategy.n
    if not 1 <= n <= m:
        raise ConfigError(f"cannot draw {n} of {m} teacher layers")
    if rng is None:
        raise ConfigError("random_n_of_m needs a random stream")
    return sorted(int(i) + 1 for i in rng.choice(m, size=n, replace=False))


def realize_mapping(strategy, rng=None):
    """Turn a strategy into concrete pairs; random strategies draw afresh on each call."""
    teacher = _teacher_indices(strategy, rng)
    if not teacher:
        raise ConfigError(f"{strategy.kind} mapping selects no teacher layers")
    if strategy.purpose == "pred":
        return LayerMap(tuple((strategy.student_depth, t) for t in teacher))
    if len(teacher) != strategy.student_depth:
        raise ConfigError(
            f"{strategy.kind} mapping gives {len(teacher)} teacher layers for a "
            f"{strategy.student_depth}-layer student"
        )
    return LayerMap(tuple(zip(range(1, strategy.student_depth + 1), teacher)))


def default_l2l_strategy(student_depth, teacher_depth):
    """Evenly spaced teacher layers ending at the top one.

    Covers every pairing used for the model family: all layers at equal
    depth, every second layer (12 of 24, 6 of 12), every fourth (3 of 12)
    and every eighth (3 of 24).
    """
    if student_depth == teacher_depth:
        return MappingStrategy("all_layers", teacher_depth, student_depth)
    if teacher_depth % student_depth:
        raise ConfigError(
            f"no default mapping from {student_depth} onto {teacher_depth} layers; give explicit targets"
        )
    return MappingStrategy("stride", teacher_depth, student_depth, stride=teacher_depth // student_depth)


def default_pred_strategy(student_depth, teacher_depth, n_targets=3):
    """Every (depth/n_targets)-th teacher layer: {4, 8, 12} for BASE, {8, 16, 24} for LARGE."""
    if teacher_depth % n_targets:
        raise ConfigError(f"cannot spread {n_targets} targets evenly over {teacher_depth} layers")
    return MappingStrategy("stride", teacher_depth, student_depth, stride=teacher_depth // n_targets, purpose="pred")


def parse_targets(spec, student_depth, teacher_depth, purpose):
    """Read a ``kd.targets`` value: a list of layers, ``all``, ``strideK`` or ``n_of_m``."""
    if spec is None:
        if purpose == "pred":
            return default_pred_strategy(student_depth, teacher_depth)
        return default_l2l_strategy(student_depth, teacher_depth)
    if isinstance(spec, (list, tuple)):
        return MappingStrategy("explicit", teacher_depth, student_depth, indices=tuple(int(i) for i in spec),
                               purpose=purpose)
    text = str(spec).strip().lower()
    if text == "all":
        return MappingStrategy("all_layers", teacher_depth, student_depth, purpose=purpose)
    if text.startswith("stride"):
        try:
            k = int(text[len("stride"):])
        except ValueError:
            raise ConfigError(f"bad targets value {spec!r}; expected strideK") from None
        return MappingStrategy("stride", teacher_depth, student_depth, stride=k, purpose=purpose)
    if text in ("n_of_m", "random"):
        return MappingStrategy("random_n_of_m", teacher_depth, student_depth, n=student_depth, purpose=purpose)
    raise ConfigError(f"bad targets value {spec!r}; expected a list, 'all', 'strideK' or 'n_of_m'")
