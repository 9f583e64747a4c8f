"""Named, splittable random streams on top of the Philox counter generator.

Every stochastic consumer asks for its own stream by name, e.g.
``stream(seed, "init", "block3")``; no code touches a global generator.
"""
from __future__ import annotations

import json
import zlib

import numpy as np


def _key(part):
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed, *names):
    seq = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(_key(n) for n in names))
    return np.random.Generator(np.random.Philox(seq))


def get_state(gen):
    """JSON text of a generator's position, suitable for checkpointing."""
    state = gen.bit_generator.state

    def _plain(v):
        if isinstance(v, dict):
            return {k: _plain(x) for k, x in v.items()}
        if isinstance(v, np.ndarray):
            return {"__array__": v.tolist(), "dtype": str(v.dtype)}
        if isinstance(v, np.integer):
            return int(v)
        return v

    return json.dumps(_plain(state), sort_keys=True)


def set_state(gen, text):
    def _restore(v):
        if isinstance(v, dict):
            if "__array__" in v:
                return np.asarray(v["__array__"], dtype=v["dtype"])
            return {k: _restore(x) for k, x in v.items()}
        return v

    gen.bit_generator.state = _restore(json.loads(text))
    return gen
