"""RIFF/WAVE reading and writing for 16 kHz mono audio."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from distillkit.errors import (
    LengthError,
    MalformedHeaderError,
    SampleRateError,
    UnsupportedCodecError,
    WavFormatError,
)

SAMPLE_RATE = 16000
MIN_SAMPLES = 400

_PCM = 1
_IEEE_FLOAT = 3
_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise SampleRateError(f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}")
        if self.samples.ndim != 1:
            raise WavFormatError(f"waveform must be mono (1-D), got shape {self.samples.shape}")
        if len(self.samples) < MIN_SAMPLES:
            raise LengthError(f"waveform has {len(self.samples)} samples; the minimum is {MIN_SAMPLES}")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


def _chunks(blob):
    pos = 12
    while pos + 8 <= len(blob):
        cid, size = struct.unpack_from("<4sI", blob, pos)
        body = blob[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise MalformedHeaderError(f"chunk {cid!r} claims {size} bytes but only {len(body)} remain")
        yield cid, body
        pos += 8 + size + (size & 1)


def parse_wav(blob, source="<bytes>"):
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise MalformedHeaderError(f"{source}: not a RIFF/WAVE file")
    fmt = data = None
    for cid, body in _chunks(blob):
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
    if fmt is None or len(fmt) < 16:
        raise MalformedHeaderError(f"{source}: missing or truncated fmt chunk")
    if data is None:
        raise MalformedHeaderError(f"{source}: missing data chunk")
    tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if tag == _EXTENSIBLE:
        if len(fmt) < 26:
            raise MalformedHeaderError(f"{source}: truncated WAVE_FORMAT_EXTENSIBLE header")
        tag = struct.unpack_from("<H", fmt, 24)[0]
    if channels not in (1, 2):
        raise UnsupportedCodecError(f"{source}: {channels} channels; only mono or stereo are read")
    if tag == _PCM and bits == 16:
        dtype, scale = "<i2", 1.0 / 32768.0
    elif tag == _IEEE_FLOAT and bits == 32:
        dtype, scale = "<f4", 1.0
    else:
        raise UnsupportedCodecError(f"{source}: format tag {tag} with {bits} bits; need PCM16 or float32")
    if block_align != channels * bits // 8:
        raise MalformedHeaderError(f"{source}: block align {block_align} inconsistent with {channels}x{bits} bits")
    if rate != SAMPLE_RATE:
        raise SampleRateError(f"{source}: sample rate {rate} Hz; only {SAMPLE_RATE} Hz is accepted (no resampling)")
    usable = len(data) - len(data) % block_align
    x = np.frombuffer(data[:usable], dtype=dtype).astype(np.float64) * scale
    x = x.reshape(-1, channels).mean(axis=1)
    if not np.isfinite(x).all() or np.abs(x).max(initial=0.0) > 1.0:
        raise WavFormatError(f"{source}: float samples outside [-1, 1]")
    return Waveform(x, rate)


def read_wav(path):
    with open(path, "rb") as fh:
        return parse_wav(fh.read(), source=str(path))


def wav_bytes(samples, sample_rate=SAMPLE_RATE, fmt="pcm16", channels=1):
    """Encode samples (frames,) or (frames, channels) as a RIFF/WAVE byte string."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = np.repeat(x[:, None], channels, axis=1)
    channels = x.shape[1]
    if fmt == "pcm16":
        payload = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2").tobytes()
        tag, bits = _PCM, 16
    elif fmt == "float32":
        payload = x.astype("<f4").tobytes()
        tag, bits = _IEEE_FLOAT, 32
    else:
        raise UnsupportedCodecError(f"cannot write format {fmt!r}")
    block = channels * bits // 8
    fmt_chunk = struct.pack("<HHIIHH", tag, channels, sample_rate, sample_rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt_chunk)) + fmt_chunk
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\0"
    return b"RIFF" + struct.pack("<I", len(body)) + body


def write_wav(path, samples, sample_rate=SAMPLE_RATE, fmt="pcm16"):
    with open(path, "wb") as fh:
        fh.write(wav_bytes(samples, sample_rate, fmt))
