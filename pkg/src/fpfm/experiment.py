"""Benchmark orchestration: train, adapt to shots, generate, evaluate, aggregate.

Work is split into independent jobs, one per ``(method, seed)``.  Each job trains
its model once and evaluates it on every requested split.  Per-cell results go to
separate files and are merged in a fixed order afterwards, so the output does not
depend on how many workers ran.
"""
from __future__ import annotations

import copy
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import baselines as bl
from .basis import make_projected_field, project_static, train_static, train_temporal
from .config import ExperimentConfig
from .datasets import conditioning_code, make_splits, sample, sample_arc, write_csv
from .dynamic import make_dynamic_field, train_dynamic
from .exceptions import ConfigError
from .flow import integrate
from .metrics import (MetricReport, aggregate, precision_recall, time_generation,
                      write_aggregate, write_reports)
from .svg import write_scatter
from .utils import child_seed, derive_rng

FP_METHODS = ("static", "temporal", "dynamic")
SWEEP_AXES = ("shots", "basis_count")


def worker_count(default=1):
    raw = os.environ.get("FPFM_WORKERS", "")
    if not raw:
        return default
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigError(f"FPFM_WORKERS must be an integer, got {raw!r}") from exc
    if value < 1:
        raise ConfigError("FPFM_WORKERS must be >= 1")
    return value


@dataclass
class SeedContext:
    """Everything one seed's cells share: the training family and, per split, the
    target spec, its shots, the evaluation reference and the generation noise."""

    seed: int
    train: list
    specs: dict
    shots: dict
    reference: dict
    noise: dict


def train_family(cfg, seed):
    td, _, _ = make_splits(cfg.data.n_train_arcs, seed)
    return [sample_arc(spec, cfg.data.train_samples, derive_rng(seed, "train-data", i))
            for i, spec in enumerate(td)]


def seed_context(cfg: ExperimentConfig, seed):
    td, ud, us = make_splits(cfg.data.n_train_arcs, seed)
    pick = derive_rng(seed, "targets")
    specs = {"TD": td[int(pick.integers(len(td)))], "UD": ud[int(pick.integers(len(ud)))],
             "US": us}
    shots, reference, noise = {}, {}, {}
    for split, spec in specs.items():
        shots[split] = sample(spec, cfg.data.shots, derive_rng(seed, "shots", split))
        if cfg.data.eval_reference == "shots":
            reference[split] = shots[split]
        else:
            reference[split] = sample(spec, cfg.data.n_real, derive_rng(seed, "real", split))
        noise[split] = derive_rng(seed, "noise", split).standard_normal(
            (cfg.data.n_generated, 2))
    return SeedContext(seed, train_family(cfg, seed), specs, shots, reference, noise)


def train_method(cfg, method, train, seed):
    """The trained, target-independent part of ``method``."""
    if method == "static":
        return train_static(train, cfg.train_config(seed))
    if method == "temporal":
        return train_temporal(train, cfg.train_config(seed))
    if method == "dynamic":
        return train_dynamic(train, cfg.dynamic_train_config(seed), cfg.dynamic_config())
    if method == "conditional":
        codes = [conditioning_code(d.spec) for d in train]
        return bl.train_conditional(train, codes, cfg.flow_config(seed))
    if method in ("unconditional", "finetune", "classifier_guided", "distribution_guided"):
        return bl.train_unconditional(train, cfg.flow_config(seed))
    raise ConfigError(f"unknown method {method!r}")


def _negatives(train, spec):
    """Training distributions other than the target (and other than its mixture
    components); the whole family when the target is not a member."""
    members = getattr(spec, "components", (spec,))
    out = [d for d in train if d.spec not in members]
    return out or list(train)


def make_generator(cfg, method, model, shots, spec, train, seed):
    """Adapt ``model`` to ``shots`` and return ``(generate(x0) -> samples, note)``.

    Adaptation cost (static coefficients, per-target training) is paid here, outside
    the timed generation call.
    """
    icfg = cfg.integrator_config()
    lam = cfg.train.ridge
    m_eval = cfg.train.m_eval
    proj_seed = child_seed(seed, "projection")
    if method == "static":
        c = project_static(model, shots, m_eval, derive_rng(proj_seed, "static"), lam)
        field = make_projected_field(model, "static", c=c)
        return (lambda x0: integrate(field, x0, icfg)), ""
    if method == "temporal":
        def gen(x0):
            field = make_projected_field(model, "temporal", shots=shots, m_eval=m_eval,
                                         seed=proj_seed, lam=lam)
            return integrate(field, x0, icfg)
        return gen, ""
    if method == "dynamic":
        field = make_dynamic_field(model, shots, cfg.dynamic_config(), lam)
        return (lambda x0: integrate(field, x0, icfg)), ""
    if method == "unconditional":
        return (lambda x0: integrate(model, x0, icfg)), ""
    if method == "conditional":
        code = conditioning_code(spec)
        field = model.field(code)
        return (lambda x0: integrate(field, x0, icfg)), f"code={code:.17g}"
    if method == "finetune":
        tuned = bl.finetune(model, shots, cfg.flow_config(seed), cfg.baselines.finetune_steps,
                            cfg.baselines.finetune_lr)
        return (lambda x0: integrate(tuned, x0, icfg)), ""
    if method == "classifier_guided":
        clf = bl.train_classifier(shots, _negatives(train, spec),
                                  cfg.flow_config(seed, cfg.baselines.classifier_steps))
        field = bl.classifier_guided_field(model, clf, cfg.guidance_config())
        return (lambda x0: integrate(field, x0, icfg)), f"alpha={cfg.guidance.alpha:g}"
    if method == "distribution_guided":
        sampler = bl.train_distribution_guided(
            model, shots, cfg.flow_config(seed, cfg.baselines.secondary_steps),
            cfg.baselines.backward_steps)
        return (lambda x0: sampler.sample(x0, icfg)), ""
    raise ConfigError(f"unknown method {method!r}")


def _cell_name(method, split, seed):
    return f"{method}-{split}-s{seed}"


def _failure(method, split, seed, exc):
    return MetricReport(method, split, seed, status="failed",
                        note=f"{type(exc).__name__}: {exc}".replace("\n", " "))


def run_job(cfg, method, seed, out_dir=None):
    """Train ``method`` for ``seed`` and evaluate it on every configured split.

    Failures are confined to the cells they occur in and reported as rows with
    ``status = failed``.
    """
    splits = cfg.experiment.splits
    ctx = seed_context(cfg, seed)
    try:
        model = train_method(cfg, method, ctx.train, seed)
    except Exception as exc:  # isolate the job; reported in the row
        return [_failure(method, s, seed, exc) for s in splits]
    reports = []
    for split in splits:
        try:
            reports.append(_run_cell(cfg, method, split, ctx, model, out_dir))
        except Exception as exc:
            reports.append(_failure(method, split, seed, exc))
    return reports


def _run_cell(cfg, method, split, ctx, model, out_dir):
    shots, spec = ctx.shots[split], ctx.specs[split]
    gen, note = make_generator(cfg, method, model, shots, spec, ctx.train, ctx.seed)
    x0 = ctx.noise[split]
    if x0.shape[0] == 0:
        raise ValueError("n_generated = 0 leaves nothing to evaluate")
    mean_s, _, samples = time_generation(gen, x0, cfg.experiment.timing_repeats)
    if not np.all(np.isfinite(samples)):
        raise FloatingPointError("generated samples are not finite")
    ref = ctx.reference[split]
    p, r = precision_recall(ref, samples, cfg.data.kappa)
    report = MetricReport(method, split, ctx.seed, p, r, mean_s, len(ref), len(samples),
                          note=note)
    if out_dir is not None:
        cells = os.path.join(out_dir, "cells")
        os.makedirs(cells, exist_ok=True)
        name = _cell_name(method, split, ctx.seed)
        write_csv(os.path.join(cells, name + ".csv"), samples)
        if cfg.experiment.plots:
            write_scatter(os.path.join(cells, name + ".svg"), shots, samples,
                          f"{method} {split} seed {ctx.seed}")
        with open(os.path.join(cells, name + ".json"), "w") as fh:
            json.dump(vars(report), fh, sort_keys=True)
    return report


def _job(args):
    cfg, method, seed, out_dir = args
    return run_job(cfg, method, seed, out_dir)


def run_benchmark(cfg: ExperimentConfig, out_dir=None, workers=None):
    """All ``methods x seeds`` jobs; returns ``(cell reports, aggregate rows)``.

    With ``out_dir`` set, writes ``cells.csv``, ``aggregate.csv`` and per-cell files.
    """
    workers = worker_count() if workers is None else workers
    jobs = [(cfg, m, s, out_dir) for m in cfg.experiment.methods for s in cfg.experiment.seeds]
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    if workers <= 1 or len(jobs) <= 1:
        results = [_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_job, jobs))
    reports = [r for rows in results for r in rows]
    agg = aggregate(reports)
    if out_dir is not None:
        write_reports(os.path.join(out_dir, "cells.csv"), reports)
        write_aggregate(os.path.join(out_dir, "aggregate.csv"), agg)
    return reports, agg


def apply_axis(cfg, axis, value):
    """Copy of ``cfg`` with one sweep axis set.  ``shots`` changes both the shots used
    at adaptation and the per-distribution training set size."""
    new = copy.deepcopy(cfg)
    if axis == "shots":
        new.data.shots = int(value)
        new.data.train_samples = int(value)
    elif axis == "basis_count":
        new.train.k = int(value)
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    return new


def run_sweep(cfg, axis, values, out_dir=None, workers=None):
    """One benchmark per axis value; returns ``(cell rows, aggregate rows)`` with the
    axis name and value prepended to every row."""
    if not values:
        raise ConfigError("sweep needs at least one value")
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    cells, aggs = [], []
    for value in values:
        sub = None if out_dir is None else os.path.join(out_dir, f"{axis}_{value}")
        reports, agg = run_benchmark(apply_axis(cfg, axis, value), sub, workers)
        for r in reports:
            cells.append({"axis": axis, "value": value, **vars(r)})
        for a in agg:
            aggs.append({"axis": axis, "value": value, **a})
    if out_dir is not None:
        write_reports(os.path.join(out_dir, "sweep.csv"), cells, extra_columns=("axis", "value"))
        write_aggregate(os.path.join(out_dir, "sweep_aggregate.csv"), aggs,
                        keys=("axis", "value", "method", "split"))
    return cells, aggs
