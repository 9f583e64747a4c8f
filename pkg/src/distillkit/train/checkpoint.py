"""Little-endian binary checkpoints.

Layout::

    b"DKD1"  u32 version
    u32 n, n bytes     config block (UTF-8 JSON)
    tensor table       parameters
    u8 has_optimizer   [u64 t, tensor table m, tensor table v]
    u64 step
    u32 n, n bytes     RNG cursor (UTF-8 JSON)

A tensor table is ``u32 count`` followed by, per tensor, ``u32 n`` + name,
``u8`` dtype tag (1 = f64), ``u32`` rank, ``u64`` extents and the raw payload.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from distillkit.errors import ConfigError, DistillKitError

MAGIC = b"DKD1"
FORMAT_VERSION = 1
F64 = 1


class CheckpointError(DistillKitError):
    pass


@dataclass
class Checkpoint:
    config: dict
    params: dict                      # name -> float64 array
    optimizer: dict | None = None     # {"t": int, "m": {...}, "v": {...}}
    step: int = 0
    rng_state: str = "{}"
    version: int = FORMAT_VERSION
    extras: dict = field(default_factory=dict)


def _text(buf, s):
    raw = s.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def _table(buf, tensors):
    buf.write(struct.pack("<I", len(tensors)))
    for name in tensors:
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        _text(buf, name)
        buf.write(struct.pack("<BI", F64, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())


def to_bytes(ckpt):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", ckpt.version))
    _text(buf, json.dumps(ckpt.config, sort_keys=True))
    _table(buf, ckpt.params)
    if ckpt.optimizer is None:
        buf.write(struct.pack("<B", 0))
    else:
        buf.write(struct.pack("<BQ", 1, ckpt.optimizer["t"]))
        _table(buf, ckpt.optimizer["m"])
        _table(buf, ckpt.optimizer["v"])
    buf.write(struct.pack("<Q", ckpt.step))
    _text(buf, ckpt.rng_state)
    return buf.getvalue()


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.blob):
            raise CheckpointError("checkpoint is truncated")
        out = struct.unpack_from(fmt, self.blob, self.pos)
        self.pos += size
        return out

    def text(self):
        (n,) = self.take("<I")
        raw = self.blob[self.pos:self.pos + n]
        if len(raw) != n:
            raise CheckpointError("checkpoint is truncated")
        self.pos += n
        return raw.decode("utf-8")

    def table(self):
        (count,) = self.take("<I")
        out = {}
        for _ in range(count):
            name = self.text()
            tag, rank = self.take("<BI")
            if tag != F64:
                raise CheckpointError(f"tensor {name!r} has unknown dtype tag {tag}")
            shape = self.take(f"<{rank}Q")
            n = int(np.prod(shape)) * 8
            raw = self.blob[self.pos:self.pos + n]
            if len(raw) != n:
                raise CheckpointError("checkpoint is truncated")
            self.pos += n
            out[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
        return out


def from_bytes(blob):
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    r = _Reader(blob)
    r.pos = 4
    (version,) = r.take("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config = json.loads(r.text())
    params = r.table()
    (has_opt,) = r.take("<B")
    optimizer = None
    if has_opt:
        (t,) = r.take("<Q")
        optimizer = {"t": t, "m": r.table(), "v": r.table()}
    (step,) = r.take("<Q")
    rng_state = r.text()
    return Checkpoint(config, params, optimizer, step, rng_state, version)


def save_checkpoint(path, ckpt):
    with open(path, "wb") as fh:
        fh.write(to_bytes(ckpt))


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            return from_bytes(fh.read())
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {path}") from None
