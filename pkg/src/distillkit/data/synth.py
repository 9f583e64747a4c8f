"""Seeded synthetic speech-like corpus used in place of a real audio collection."""
from __future__ import annotations

import numpy as np

from distillkit.data.wav import MIN_SAMPLES, SAMPLE_RATE, Waveform
from distillkit.errors import ConfigError
from distillkit.numerics import rng

PEAK = 0.95
NOISE_LEVEL = 0.01
MIN_DURATION = MIN_SAMPLES / SAMPLE_RATE
MAX_DURATION = 10.0


def synth_item(seed, index, min_dur, max_dur, n_components=(3, 8)):
    """One item: amplitude-modulated sinusoids plus 1% uniform noise, peak-normalized."""
    g = rng.stream(seed, "synth", index)
    n = max(MIN_SAMPLES, int(round(g.uniform(min_dur, max_dur) * SAMPLE_RATE)))
    lo, hi = (n_components, n_components) if isinstance(n_components, int) else n_components
    k = int(g.integers(lo, hi + 1))
    t = np.arange(n) / SAMPLE_RATE
    freqs = g.uniform(80.0, 4000.0, size=k)
    amps = g.uniform(0.2, 1.0, size=k)
    phases = g.uniform(0.0, 2 * np.pi, size=k)
    mod_freqs = g.uniform(0.5, 8.0, size=k)
    mod_depths = g.uniform(0.0, 0.5, size=k)
    mod_phases = g.uniform(0.0, 2 * np.pi, size=k)
    x = np.zeros(n)
    for f, a, p, fm, dm, pm in zip(freqs, amps, phases, mod_freqs, mod_depths, mod_phases):
        x += a * (1.0 + dm * np.sin(2 * np.pi * fm * t + pm)) * np.sin(2 * np.pi * f * t + p)
    x += NOISE_LEVEL * np.abs(x).max() * g.uniform(-1.0, 1.0, size=n)
    x *= PEAK / np.abs(x).max()
    return Waveform(x), freqs


def synth_corpus(seed, n_items, min_dur, max_dur, n_components=(3, 8)):
    """``n_items`` waveforms; item ``i`` depends only on (seed, i)."""
    if not MIN_DURATION <= min_dur <= max_dur <= MAX_DURATION:
        raise ConfigError(
            f"durations must satisfy {MIN_DURATION} <= min <= max <= {MAX_DURATION} s, got {min_dur}, {max_dur}"
        )
    return [synth_item(seed, i, min_dur, max_dur, n_components)[0] for i in range(n_items)]


def parse_synth_flag(text):
    """``seed:n:min:max`` -> (seed, n_items, min_dur, max_dur)."""
    parts = str(text).split(":")
    if len(parts) != 4:
        raise ConfigError(f"--synth expects seed:n:min:max, got {text!r}")
    try:
        return int(parts[0]), int(parts[1]), float(parts[2]), float(parts[3])
    except ValueError:
        raise ConfigError(f"--synth expects seed:n:min:max with numbers, got {text!r}") from None
