"""k-NN manifold precision/recall, generation timing and report aggregation."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .utils import check_samples

BLOCK = 1024


def _pairwise_sq(a, b):
    # explicit differences: exact zero self-distances, no cancellation at ball edges
    diff = a[:, None, :] - b[None, :, :]
    return np.sum(diff * diff, axis=2)


def knn_radii(points, kappa=3):
    """Distance from each point to its ``kappa``-th nearest other point."""
    points = check_samples(points, name="reference points")
    m = points.shape[0]
    if not 0 < kappa < m:
        raise ValueError(f"need more than kappa={kappa} points, got {m}")
    radii = np.empty(m)
    for s in range(0, m, BLOCK):
        d = _pairwise_sq(points[s:s + BLOCK], points)
        # the zero self-distance sorts first, so index kappa is the kappa-th neighbour
        radii[s:s + BLOCK] = np.sqrt(np.partition(d, kappa, axis=1)[:, kappa])
    return radii


def coverage(evaluated, reference, kappa=3):
    """Fraction of ``evaluated`` points inside at least one reference k-NN ball."""
    evaluated = check_samples(evaluated, name="evaluated points")
    reference = check_samples(reference, evaluated.shape[1], name="reference points")
    r2 = knn_radii(reference, kappa) ** 2
    hits = 0
    for s in range(0, evaluated.shape[0], BLOCK):
        d = _pairwise_sq(evaluated[s:s + BLOCK], reference)
        hits += int(np.count_nonzero(np.any(d <= r2[None, :], axis=1)))
    return hits / evaluated.shape[0]


def precision_recall(real, generated, kappa=3):
    """Precision: generated points on the real manifold.  Recall: real points on the
    generated manifold.  Manifolds are unions of k-NN balls."""
    real = check_samples(real, name="real")
    generated = check_samples(generated, real.shape[1], name="generated")
    if min(real.shape[0], generated.shape[0]) <= kappa:
        raise ValueError(f"both sets need more than kappa={kappa} points")
    return coverage(generated, real, kappa), coverage(real, generated, kappa)


def time_generation(generate, x0, repeats=3):
    """Wall-clock seconds of ``generate(x0)``; returns ``(mean, std, samples)`` where
    ``samples`` is the output of the last run."""
    times = []
    out = None
    for _ in range(repeats):
        start = time.perf_counter()
        out = generate(x0)
        times.append(time.perf_counter() - start)
    times = np.asarray(times)
    return float(times.mean()), float(times.std(ddof=1)) if repeats > 1 else 0.0, out


@dataclass
class MetricReport:
    method: str
    split: str
    seed: int
    precision: float = float("nan")
    recall: float = float("nan")
    gen_seconds: float = float("nan")
    n_real: int = 0
    n_generated: int = 0
    status: str = "ok"
    note: str = ""
    extra: dict = field(default_factory=dict)


REPORT_COLUMNS = ["method", "split", "seed", "precision", "recall", "gen_seconds"]
SPLIT_ORDER = {"TD": 0, "UD": 1, "US": 2}


def _sort_key(row):
    return (row["method"], SPLIT_ORDER.get(row["split"], 9), row["split"], row.get("seed", 0))


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _as_row(report):
    if isinstance(report, dict):
        return report
    return {**vars(report), **report.extra}


def write_reports(path, reports, extra_columns=()):
    """Per-cell CSV, ordered by the extra columns, then (method, split, seed)."""
    rows = sorted((_as_row(r) for r in reports),
                  key=lambda r: (*[r[c] for c in extra_columns], *_sort_key(r)))
    cols = list(extra_columns) + REPORT_COLUMNS + ["status", "note"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([_fmt(row.get(c, "")) for c in cols])


def aggregate(reports, keys=("method", "split")):
    """Group reports and emit mean and sample standard deviation per metric.

    A group with a single seed gets ``std = 0`` and ``single_seed = True``.
    """
    groups = {}
    for r in reports:
        r = _as_row(r)
        if r.get("status", "ok") != "ok":
            continue
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for key, rows in groups.items():
        row = dict(zip(keys, key))
        row["n_seeds"] = len(rows)
        row["single_seed"] = len(rows) == 1
        for metric in ("precision", "recall", "gen_seconds"):
            vals = np.array([float(x[metric]) for x in rows])
            row[f"{metric}_mean"] = float(vals.mean())
            row[f"{metric}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out.append(row)
    return sorted(out, key=lambda r: (*[r[k] for k in keys[:-2]], r["method"],
                                      SPLIT_ORDER.get(r["split"], 9)))


AGG_METRICS = ["precision", "recall", "gen_seconds"]


def write_aggregate(path, rows, keys=("method", "split")):
    cols = list(keys) + ["n_seeds"] + [f"{m}_{s}" for m in AGG_METRICS for s in ("mean", "std")]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in cols])
