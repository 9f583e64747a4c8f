"""Deterministic shuffling, zero padding and frame masks."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from distillkit.data.wav import read_wav
from distillkit.errors import ConfigError
from distillkit.model.config import ConvFrontendSpec
from distillkit.numerics import rng

_FRONTEND = ConvFrontendSpec()


@dataclass(eq=False)
class Batch:
    waves: np.ndarray          # (batch, max_len), zero padded
    lengths: np.ndarray        # true sample counts
    frame_lengths: np.ndarray  # frames produced by each true length
    mask: np.ndarray           # (batch, frames) validity
    indices: np.ndarray        # corpus positions

    def __len__(self):
        return len(self.lengths)


def collate(items, indices=None, frontend=_FRONTEND):
    lengths = np.array([len(w) for w in items], dtype=np.int64)
    waves = np.zeros((len(items), int(lengths.max())))
    for i, w in enumerate(items):
        waves[i, :len(w)] = w.samples
    fl = np.array([frontend.output_length(int(n)) for n in lengths], dtype=np.int64)
    mask = np.arange(int(fl.max()))[None, :] < fl[:, None]
    idx = np.arange(len(items)) if indices is None else np.asarray(indices, dtype=np.int64)
    return Batch(waves, lengths, fl, mask, idx)


def epoch_order(n_items, seed, epoch):
    return rng.stream(seed, "shuffle", epoch).permutation(n_items)


def make_batches(corpus, batch_size, seed, epoch=0):
    """Batches for one epoch; the shuffle depends only on (seed, epoch)."""
    if not corpus:
        raise ConfigError("cannot batch an empty corpus")
    if batch_size < 1:
        raise ConfigError(f"batch size must be positive, got {batch_size}")
    order = epoch_order(len(corpus), seed, epoch)
    return [
        collate([corpus[i] for i in order[s:s + batch_size]], order[s:s + batch_size])
        for s in range(0, len(corpus), batch_size)
    ]


def batches_per_epoch(n_items, batch_size):
    return -(-n_items // batch_size)


def batch_at(corpus, batch_size, seed, step):
    """The batch consumed at a given 0-based training step."""
    per = batches_per_epoch(len(corpus), batch_size)
    epoch, pos = divmod(step, per)
    order = epoch_order(len(corpus), seed, epoch)
    idx = order[pos * batch_size:(pos + 1) * batch_size]
    return collate([corpus[i] for i in idx], idx)


def read_manifest(path):
    """Waveforms listed one path per line; relative paths resolve against the manifest."""
    base = os.path.dirname(os.path.abspath(path))
    items = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            items.append(read_wav(line if os.path.isabs(line) else os.path.join(base, line)))
    if not items:
        raise ConfigError(f"manifest {path} lists no files")
    return items
