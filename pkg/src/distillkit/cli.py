"""Command-line entry point: distill, make-teacher, features, similarity, count-params, rank."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources

import numpy as np

from distillkit import __version__
from distillkit.analysis import layer_similarity, read_results_csv
from distillkit.analysis.features import weighted_sum_features
from distillkit.analysis.ranks import aggregate_ranks
from distillkit.data import parse_synth_flag, read_manifest, synth_corpus
from distillkit.errors import ConfigError, DistillKitError
from distillkit.model import PRESETS, PUBLISHED_PARAMS, build_model, count_params, get_preset, strip_aux
from distillkit.model.config import ModelConfig, load_model_config
from distillkit.train import model_checkpoint, model_from_checkpoint, run_distillation, save_checkpoint
from distillkit.train.config import (
    DEFAULTS,
    RUN_PRESETS,
    apply_overrides,
    load_run_file,
    merge,
    parse_override,
    resolve_run,
)

log = logging.getLogger("distillkit")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
FIXTURES = ("table1", "table3", "table4")


def _setup_logging():
    level = os.environ.get("DISTILLKIT_LOG", "info").strip().lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise ConfigError(f"DISTILLKIT_LOG must be one of {sorted(levels)}, got {level!r}")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def write_manifest(out_dir, command, resolved, seed):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {"command": command, "config": resolved, "seed": seed, "tool": "distillkit",
                "tool_version": __version__}
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _corpus(args, data=None):
    data = data or {}
    synth = getattr(args, "synth", None) or data.get("synth")
    manifest = getattr(args, "manifest", None) or data.get("manifest")
    if synth:
        seed, n, lo, hi = parse_synth_flag(synth)
        return synth_corpus(seed, n, lo, hi), {"synth": synth}
    if manifest:
        return read_manifest(manifest), {"manifest": manifest}
    raise ConfigError("no data: pass --synth seed:n:min:max or --manifest PATH (data.synth / data.manifest)")


def _overrides(args):
    return [parse_override(s) for s in (args.set or [])]


# -- make-teacher -------------------------------------------------------------

def _teacher_config(args):
    if args.config:
        raw = load_run_file(args.config)
        raw = raw.get("model", raw)
    elif args.preset:
        raw = get_preset(args.preset).to_dict()
    else:
        raise ConfigError("make-teacher needs --preset NAME or --config PATH")
    raw = apply_overrides({"model": raw}, _overrides(args))["model"]
    return ModelConfig.from_dict(raw)


def cmd_make_teacher(args):
    config = _teacher_config(args)
    seed = args.seed if args.seed is not None else 0
    model = build_model(config, seed)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "teacher.dkd")
    save_checkpoint(path, model_checkpoint(model, {"origin": "seeded random teacher (not pre-trained)",
                                                   "seed": seed}))
    write_manifest(args.out, "make-teacher", {"model": config.to_dict()}, seed)
    print(f"wrote {path} ({count_params(config):,} parameters, seeded random init, not pre-trained)")
    return EXIT_OK


# -- distill -----------------------------------------------------------------

def resolve_distill_args(args):
    raw = merge(DEFAULTS, {})
    if args.preset:
        if args.preset not in RUN_PRESETS:
            raise ConfigError(f"unknown run preset {args.preset!r}; valid presets: {', '.join(sorted(RUN_PRESETS))}")
        raw = merge(raw, RUN_PRESETS[args.preset])
    if args.config:
        raw = merge(raw, load_run_file(args.config))
    overrides = _overrides(args)
    if args.seed is not None:
        overrides.append(("run.seed", args.seed))
    if args.synth:
        overrides.append(("data.synth", args.synth))
    raw = apply_overrides(raw, overrides)
    return resolve_run(raw)


def cmd_distill(args):
    resolved = resolve_distill_args(args)
    corpus, _ = _corpus(args, resolved.data)
    os.makedirs(args.out, exist_ok=True)
    if resolved.teacher_path:
        if not os.path.isfile(resolved.teacher_path):
            print(f"error: teacher checkpoint not found: {resolved.teacher_path}", file=sys.stderr)
            return EXIT_USAGE
        teacher_ckpt = resolved.teacher_path
        teacher_depth = model_from_checkpoint(teacher_ckpt, trainable=False).config.n_layers
    else:
        teacher = build_model(resolved.teacher_model, resolved.teacher_seed)
        teacher_ckpt = model_checkpoint(teacher, {"origin": "seeded random teacher (not pre-trained)",
                                                  "seed": resolved.teacher_seed})
        save_checkpoint(os.path.join(args.out, "teacher.dkd"), teacher_ckpt)
        teacher_depth = resolved.teacher_model.n_layers
    objective = resolved.objective(teacher_depth)
    write_manifest(args.out, "distill", resolved.raw, resolved.run.seed)
    result = run_distillation(teacher_ckpt, resolved.run, resolved.student, objective, corpus,
                              out_dir=args.out, resume=args.resume)
    last = result.trace[-1] if result.trace else None
    if last is not None:
        print(f"step {last.step}: loss {last.loss:.6f}; wrote {os.path.join(args.out, 'final.dkd')}")
    return EXIT_OK


# -- features / similarity ----------------------------------------------------

def cmd_features(args):
    model = strip_aux(model_from_checkpoint(args.ckpt, trainable=False))
    corpus, data_desc = _corpus(args)
    n = model.config.n_layers
    weights = np.zeros(n) if not args.weights else np.array([float(w) for w in args.weights.split(",")])
    os.makedirs(args.out, exist_ok=True)
    for i, wave in enumerate(corpus):
        states = model(wave.samples[None, :])
        feats = weighted_sum_features([s.data[0] for s in states], weights)
        np.save(os.path.join(args.out, f"features_{i:05d}.npy"), feats)
    write_manifest(args.out, "features", {"ckpt": args.ckpt, "weights": weights.tolist(), **data_desc}, None)
    print(f"wrote {len(corpus)} feature files to {args.out}")
    return EXIT_OK


def cmd_similarity(args):
    a = model_from_checkpoint(args.a, trainable=False)
    b = model_from_checkpoint(args.b, trainable=False)
    corpus, data_desc = _corpus(args)
    matrix = layer_similarity(a, b, corpus, args.metric)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"similarity_{args.metric}.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("layer," + ",".join(f"b{j + 1}" for j in range(matrix.shape[1])) + "\n")
        for i, row in enumerate(matrix):
            fh.write(f"a{i + 1}," + ",".join(repr(float(v)) for v in row) + "\n")
    write_manifest(args.out, "similarity", {"a": args.a, "b": args.b, "metric": args.metric, **data_desc}, None)
    print(path)
    return EXIT_OK


# -- count-params / rank -------------------------------------------------------

def count_rows(preset=None, config_path=None):
    rows = []
    if config_path:
        cfg = load_model_config(config_path)
        rows.append((cfg.name, count_params(cfg), None))
    names = list(PRESETS) if preset == "all" else ([preset] if preset else [])
    for name in names:
        cfg = get_preset(name)
        rows.append((cfg.name, count_params(cfg), PUBLISHED_PARAMS[name.strip().lower()]))
    return rows


def cmd_count_params(args):
    preset = args.preset if (args.preset or args.config) else "all"
    rows = count_rows(preset, args.config)
    failed = False
    print(f"{'model':<14} {'exact':>13} {'published':>9} {'dev %':>7}")
    for name, exact, printed in rows:
        if printed is None:
            print(f"{name:<14} {exact:>13,} {'-':>9} {'-':>7}")
            continue
        dev = 100.0 * (exact - printed) / printed
        failed |= abs(dev) > 1.5
        print(f"{name:<14} {exact:>13,} {printed / 1e6:>8.2f}M {dev:>+7.3f}")
    if args.check and failed:
        print("error: deviation above 1.5%", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def fixture_path(name):
    return str(resources.files("distillkit") / "fixtures" / f"{name}.csv")


def cmd_rank(args):
    path = args.csv
    if path in FIXTURES and not os.path.exists(path):
        path = fixture_path(path)
    table = read_results_csv(path)
    ranks = aggregate_ranks(table)
    printed = (table.notes or {}).get("printed_rank")
    width = max(len(m) for m in ranks)
    for i, (model, r) in enumerate(ranks.items()):
        extra = f"   (printed {printed[i]})" if printed and printed[i] else ""
        print(f"{model:<{width}}  {r:.1f}{extra}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "ranks.json"), "w", encoding="utf-8") as fh:
            json.dump({"source": path, "average_rank": ranks}, fh, indent=2)
            fh.write("\n")
        write_manifest(args.out, "rank", {"csv": path}, None)
    return EXIT_OK


# -- parser ---------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="distillkit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"distillkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("distill", help="distill a student from a teacher checkpoint")
    p.add_argument("--config", help="YAML run file (sections teacher, student, run, kd, data)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted override, repeatable")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="run seed (run.seed)")
    p.add_argument("--synth", metavar="SEED:N:MIN:MAX", help="synthetic corpus instead of a manifest")
    p.add_argument("--preset", help="named run preset, e.g. 6l-half-combined")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("make-teacher", help="write a seeded random teacher checkpoint (not pre-trained)")
    p.add_argument("--preset", help=f"model preset: {', '.join(PRESETS)}")
    p.add_argument("--config", help="YAML model file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override, e.g. model.n_layers=2")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_teacher)

    p = sub.add_parser("features", help="weighted-sum features of a checkpoint's hidden layers")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--synth", metavar="SEED:N:MIN:MAX")
    p.add_argument("--manifest")
    p.add_argument("--weights", help="comma-separated layer weights before softmax (default uniform)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("similarity", help="layer-by-layer similarity of two checkpoints")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--synth", metavar="SEED:N:MIN:MAX")
    p.add_argument("--manifest")
    p.add_argument("--metric", choices=("cosine", "cka"), default="cka")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_similarity)

    p = sub.add_parser("count-params", help="exact parameter counts against the published ones")
    p.add_argument("--preset", help="preset name or 'all'")
    p.add_argument("--config", help="YAML model file")
    p.add_argument("--check", action="store_true", help="exit nonzero if any deviation exceeds 1.5%%")
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("rank", help="average rank per model from a results CSV")
    p.add_argument("csv", help="results CSV, or table1/table3/table4 for the shipped fixtures")
    p.add_argument("--out", help="directory for ranks.json and manifest.json")
    p.set_defaults(func=cmd_rank)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DistillKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
