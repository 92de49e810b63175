"""Command-line entry point.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import checkpoint as ckpt_io
from .baselines import ConditionalFlow, TrainedField
from .config import ExperimentConfig, from_dict, load
from .datasets import conditioning_code, read_csv, write_csv
from .exceptions import (CheckpointError, ConfigError, DivergenceError, ShapeError,
                         SingularSystemError)
from .experiment import (FP_METHODS, make_generator, run_benchmark, run_sweep, seed_context,
                         train_family, train_method)
from .flow import NetField, integrate
from .metrics import REPORT_COLUMNS, precision_recall
from .svg import write_scatter
from .utils import derive_rng

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
# methods whose generation needs the target's shots
NEEDS_SHOTS = ("static", "temporal", "dynamic", "finetune", "classifier_guided",
               "distribution_guided")


class UsageError(Exception):
    pass


def _config(args):
    cfg = load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.experiment.seeds = [args.seed]
    return cfg


def _seed(args, cfg):
    return args.seed if args.seed is not None else cfg.experiment.seeds[0]


def _to_checkpoint(method, model, cfg, seed):
    if method in FP_METHODS:
        nets = {"basis": model.net}
        if model.mean_field is not None:
            nets["mean"] = model.mean_field
        return ckpt_io.Checkpoint(method, nets, model.n, model.k, cfg.to_dict(), seed)
    net = model.net if isinstance(model, ConditionalFlow) else model.field.net
    extra = {"conditional": isinstance(model, ConditionalFlow)}
    return ckpt_io.Checkpoint(method, {"field": net}, net.d_out, 0, cfg.to_dict(), seed, extra)


def _from_checkpoint(ck):
    if ck.method in FP_METHODS:
        return ck.basis()
    net = ck.nets["field"]
    if ck.extra.get("conditional"):
        return ConditionalFlow(net, [])
    return TrainedField(NetField(net, tag=ck.method), [])


def cmd_train(args):
    cfg = _config(args)
    seed = _seed(args, cfg)
    out = args.out or cfg.experiment.out
    os.makedirs(out, exist_ok=True)
    train = train_family(cfg, seed)
    for method in cfg.experiment.methods:
        model = train_method(cfg, method, train, seed)
        ckpt_io.save(os.path.join(out, f"{method}.fpfm"), _to_checkpoint(method, model, cfg, seed))
        with open(os.path.join(out, f"{method}_log.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "loss"])
            for step, loss in enumerate(model.loss_history):
                w.writerow([step, format(float(loss), ".17g")])
        print(f"trained {method}: {os.path.join(out, method + '.fpfm')}")
    return EXIT_OK


def cmd_generate(args):
    ck = ckpt_io.load(args.checkpoint)
    cfg = load(args.config) if args.config else from_dict(ck.config)
    seed = args.seed if args.seed is not None else ck.seed
    model = _from_checkpoint(ck)
    spec = None
    shots = None
    if args.shots:
        shots = read_csv(args.shots)
        if np.size(shots) == 0:
            raise UsageError(f"shot file {args.shots} holds no samples")
    elif args.split:
        ctx = seed_context(cfg, seed)
        shots, spec = ctx.shots[args.split], ctx.specs[args.split]
    if ck.method in NEEDS_SHOTS and shots is None:
        raise UsageError(f"method {ck.method!r} needs target shots (--shots or --split)")
    if ck.method == "conditional":
        code = args.code
        if code is None and spec is not None:
            code = conditioning_code(spec)
        if code is None:
            raise UsageError("conditional generation needs --code or --split")
        field = model.field(code)
        icfg = cfg.integrator_config()
        gen = lambda x0: integrate(field, x0, icfg)  # noqa: E731
    else:
        train = train_family(cfg, seed) if ck.method == "classifier_guided" else []
        gen, _ = make_generator(cfg, ck.method, model, shots, spec, train, seed)
    x0 = derive_rng(seed, "generate").standard_normal((args.m_out, ck.n))
    samples = gen(x0) if args.m_out else x0
    out = args.out or "generated.csv"
    write_csv(out, samples)
    if args.svg:
        write_scatter(args.svg, shots if shots is not None else np.zeros((0, 2)), samples,
                      f"{ck.method} seed {seed}")
    print(f"wrote {args.m_out} samples to {out}")
    return EXIT_OK


def cmd_eval(args):
    real = read_csv(args.real)
    gen = read_csv(args.generated)
    p, r = precision_recall(real, gen, args.kappa)
    out = args.out or "eval.csv"
    new = not os.path.exists(out) or os.path.getsize(out) == 0
    with open(out, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(REPORT_COLUMNS)
        w.writerow([args.method, args.split, args.seed if args.seed is not None else 0,
                    format(p, ".17g"), format(r, ".17g"), ""])
    print(f"precision={p:.4f} recall={r:.4f}")
    return EXIT_OK


def _summarise(reports):
    """Exit code for a benchmark: success if any cell succeeded."""
    rows = [r if isinstance(r, dict) else vars(r) for r in reports]
    for r in rows:
        if r["status"] != "ok":
            print(f"failed: {r['method']} {r['split']} seed {r['seed']}: {r['note']}",
                  file=sys.stderr)
    if any(r["status"] == "ok" for r in rows):
        return EXIT_OK
    diverged = any(("Divergence" in r["note"]) or ("FloatingPoint" in r["note"]) for r in rows)
    return EXIT_NUMERIC if diverged else EXIT_USAGE


def cmd_benchmark(args):
    cfg = _config(args)
    out = args.out or cfg.experiment.out
    reports, agg = run_benchmark(cfg, out)
    for row in agg:
        print(f"{row['method']:20s} {row['split']}  precision {row['precision_mean']:.3f} "
              f"recall {row['recall_mean']:.3f}  time {row['gen_seconds_mean']:.3f}s")
    return _summarise(reports)


def cmd_sweep(args):
    cfg = _config(args)
    values = [int(v) for v in args.values.replace(",", " ").split()] if args.values else []
    if not values:
        raise UsageError("sweep needs a non-empty --values list")
    out = args.out or cfg.experiment.out
    cells, _ = run_sweep(cfg, args.axis, values, out)
    return _summarise(cells)


def build_parser():
    parser = argparse.ArgumentParser(prog="fpfm", description="Function projection for "
                                     "flow matching on the 2D arcs benchmark.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int, help="root seed (overrides the config)")
        p.add_argument("--out", help="output path")
        return p

    p = common(sub.add_parser("train", help="train the configured methods"))
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("generate", help="sample from a checkpoint"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--shots", help="CSV of target samples to adapt to")
    p.add_argument("--split", choices=("TD", "UD", "US"),
                   help="draw shots from the seed's benchmark target for this split")
    p.add_argument("--code", type=float, help="conditioning code for the conditional model")
    p.add_argument("--m-out", type=int, default=1000)
    p.add_argument("--svg", help="also write a scatter plot")
    p.set_defaults(func=cmd_generate)

    p = common(sub.add_parser("eval", help="precision/recall of generated vs real samples"))
    p.add_argument("--real", required=True)
    p.add_argument("--generated", required=True)
    p.add_argument("--kappa", type=int, default=3)
    p.add_argument("--method", default="external")
    p.add_argument("--split", default="TD")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("benchmark", help="methods x splits x seeds table"))
    p.set_defaults(func=cmd_benchmark)

    p = common(sub.add_parser("sweep", help="ablation over shots or basis count"))
    p.add_argument("--axis", required=True, choices=("shots", "basis_count"))
    p.add_argument("--values", default="", help="comma-separated values")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        if getattr(args, "m_out", 0) < 0:
            raise UsageError("--m-out must be >= 0")
        return args.func(args)
    except (DivergenceError, FloatingPointError, SingularSystemError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CheckpointError, UsageError, ShapeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
