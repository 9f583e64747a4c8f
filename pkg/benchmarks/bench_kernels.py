"""Time the numba kernels against their pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N] [--end-to-end]

Kernels are timed on shapes from a 6-L HALF forward pass over one second of
audio. With --end-to-end, a toy training step is also timed under each
backend in a subprocess (DISTILLKIT_BACKEND is read at import).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from distillkit.numerics import kernels


def cases(g):
    x = g.standard_normal((49, 1536))
    gy = g.standard_normal(x.shape)
    ln_x = g.standard_normal((49, 384))
    xhat, rstd = kernels.NUMPY_KERNELS["layer_norm_forward"](ln_x, 1e-5)
    cols = g.standard_normal((1, 1599, 512, 3))
    return {
        "gelu_forward  (49x1536)": ("gelu_forward", (x,)),
        "gelu_backward (49x1536)": ("gelu_backward", (x, gy)),
        "ln_forward    (49x384)": ("layer_norm_forward", (ln_x, 1e-5)),
        "ln_backward   (49x384)": ("layer_norm_backward", (g.standard_normal(ln_x.shape), xhat, rstd)),
        "col2im        (1599x512x3, s2)": ("col2im", (cols, 2, 3199)),
    }


def best_of(fn, args, repeat):
    fn(*args)  # compile / warm up
    t = timeit.Timer(lambda: fn(*args))
    n, _ = t.autorange()
    return min(t.repeat(repeat, n)) / n


STEP = """
import time
from distillkit.data import synth_corpus
from distillkit.distill import DistillObjective, MappingStrategy
from distillkit.model import ModelConfig, build_model
from distillkit.train import RunConfig, model_checkpoint, run_distillation
cfg = ModelConfig("toy-32", 2, 32, 128, 4)
ck = model_checkpoint(build_model(cfg, 1))
corpus = synth_corpus(7, 4, 1.0, 1.0)
obj = DistillObjective("l2l", l2l_mapping=MappingStrategy("all_layers", 2, 2))
run_distillation(ck, RunConfig(total_steps=1, batch_size=4, seed=0), cfg, obj, corpus)  # warm up
t = time.perf_counter()
run_distillation(ck, RunConfig(total_steps=3, batch_size=4, seed=0), cfg, obj, corpus)
print((time.perf_counter() - t) / 3)
"""


def end_to_end(backend):
    env = dict(os.environ, DISTILLKIT_BACKEND=backend, DISTILLKIT_LOG="error")
    out = subprocess.run([sys.executable, "-c", STEP], env=env, check=True, capture_output=True, text=True)
    return float(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--end-to-end", action="store_true", help="also time a full training step per backend")
    args = ap.parse_args()

    if kernels.NUMBA_KERNELS is None:
        sys.exit("numba is not installed; nothing to compare")
    g = np.random.default_rng(0)
    print(f"{'kernel':<32} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for label, (name, call_args) in cases(g).items():
        t_np = best_of(kernels.NUMPY_KERNELS[name], call_args, args.repeat)
        t_nb = best_of(kernels.NUMBA_KERNELS[name], call_args, args.repeat)
        print(f"{label:<32} {t_np * 1e3:>10.3f} {t_nb * 1e3:>10.3f} {t_np / t_nb:>7.2f}x")
    if args.end_to_end:
        t_np, t_nb = end_to_end("numpy"), end_to_end("numba")
        print(f"{'train step (toy, batch 4)':<32} {t_np * 1e3:>10.1f} {t_nb * 1e3:>10.1f} {t_np / t_nb:>7.2f}x")


if __name__ == "__main__":
    main()
