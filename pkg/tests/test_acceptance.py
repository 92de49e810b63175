"""Acceptance criteria, one test per criterion.

Each test records a ``criterion N: PASS|FAIL`` line that is printed in the terminal
summary.  Criteria 1, 2 and 7 share one run of the shipped benchmark config; the
whole file takes roughly half an hour on one CPU.
"""
import copy
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import (ACCEPTANCE_LINES, bimodal_samples, fd_grad, fourier_basis,
                      quadrature_velocity, random_mlp, rel_err, trapezoid_weights)
from fpfm.basis import gram_system
from fpfm.config import load
from fpfm.dynamic import conditional_velocity
from fpfm.experiment import (apply_axis, make_generator, run_benchmark, run_sweep,
                             seed_context, train_method)
from fpfm.metrics import precision_recall
from fpfm.nn import mlp_gradients
from test_metrics import brute_coverage

ROOT = Path(__file__).resolve().parents[1]
SWEEP_SEEDS = [0, 1, 2]

pytestmark = pytest.mark.acceptance


def record(number, title, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}: {detail}")
    return ok


def cell_means(reports, method, split, seeds=None):
    rows = [r for r in reports if r.method == method and r.split == split and r.status == "ok"
            and (seeds is None or r.seed in seeds)]
    assert rows, f"no successful {method} {split} cells"
    return (float(np.mean([r.precision for r in rows])), float(np.mean([r.recall for r in rows])),
            float(np.mean([r.gen_seconds for r in rows])))


@pytest.fixture(scope="module")
def table1(tmp_path_factory):
    cfg = load(ROOT / "configs" / "table1.ini")
    out = tmp_path_factory.mktemp("table1")
    cpu0, wall0 = time.process_time(), time.perf_counter()
    reports, agg = run_benchmark(cfg, out, workers=1)
    cpu_min = (time.process_time() - cpu0) / 60
    wall_min = (time.perf_counter() - wall0) / 60
    return cfg, reports, agg, cpu_min, wall_min


def test_criterion_1_table_ordering(table1):
    cfg, reports, agg, cpu_min, wall_min = table1
    m = {(meth, split): cell_means(reports, meth, split)
         for meth in cfg.experiment.methods for split in ("TD", "UD", "US")}
    checks = {}
    for split in ("UD", "US"):
        d, t, s = (m[(v, split)][0] for v in ("dynamic", "temporal", "static"))
        checks[f"{split} D>T>S ({d:.3f}>{t:.3f}>{s:.3f})"] = d > t > s
    dp, dr, _ = m[("dynamic", "TD")]
    checks[f"dynamic TD precision {dp:.3f}>=0.75"] = dp >= 0.75
    checks[f"dynamic TD recall {dr:.3f}>=0.85"] = dr >= 0.85
    up = m[("unconditional", "TD")][0]
    checks[f"unconditional TD precision {up:.3f}<0.3"] = up < 0.3
    checks[f"cpu {cpu_min:.1f} min<=30"] = cpu_min <= 30
    failed = [k for k, ok in checks.items() if not ok]
    detail = "; ".join(checks) + f"; wall {wall_min:.1f} min"
    for row in agg:
        print(f"{row['method']:14s} {row['split']} P {row['precision_mean']:.3f}"
              f"±{row['precision_std']:.3f} R {row['recall_mean']:.3f}±{row['recall_std']:.3f}"
              f" t {row['gen_seconds_mean']:.3f}s")
    assert record(1, "table ordering", not failed, detail), failed


def test_criterion_2_generation_time_ordering(table1):
    _, reports, _, _, _ = table1
    times = {v: np.mean([cell_means(reports, v, s)[2] for s in ("TD", "UD", "US")])
             for v in ("static", "temporal", "dynamic")}
    s, t, d = times["static"], times["temporal"], times["dynamic"]
    ok = 2 * s <= t and 2 * t <= d
    assert record(2, "generation time ordering", ok,
                  f"static {s:.3f}s, temporal {t:.3f}s ({t / s:.1f}x), "
                  f"dynamic {d:.3f}s ({d / t:.1f}x)")


def test_criterion_3_estimator_vs_quadrature():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    # query states drawn from the probability path, as during generation
    t = rng.uniform(0.0, 0.9, 20)
    x = (1 - t) * rng.standard_normal(20) + t * bimodal_samples(20, rng)[:, 0]
    targets = bimodal_samples(100_000, np.random.default_rng(1))
    errs = []
    for xi, ti in zip(x, t):
        ref = quadrature_velocity(xi, ti)
        est = conditional_velocity(np.array([xi]), ti, targets).v_hat[0]
        errs.append(abs(est - ref) / abs(ref))
    seconds = time.perf_counter() - start
    worst = int(np.argmax(errs))
    ok = max(errs) < 2e-2 and seconds < 60
    detail = (f"max rel err {max(errs):.4f} at (x={x[worst]:.3f}, t={t[worst]:.3f}, "
              f"v={quadrature_velocity(x[worst], t[worst]):.4f}); "
              f"{sum(e < 2e-2 for e in errs)}/20 below 2e-2; {seconds:.1f}s")
    assert record(3, "estimator vs quadrature", ok, detail)


def test_criterion_4_gradients():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(20):
        net = random_mlp(rng)
        x = rng.normal(size=(4, net.layer_dims[0]))
        up = rng.normal(size=(4, net.layer_dims[-1]))
        grads, gin = mlp_gradients(net, x, up)

        def loss():
            return float(np.sum(up * net.forward(x)))
        for g, p in zip(grads, net.params):
            worst = max(worst, rel_err(g, fd_grad(loss, p)))
        worst = max(worst, rel_err(gin, fd_grad(loss, x)))
    assert record(4, "gradient correctness", worst < 1e-4, f"max rel err {worst:.2e} over 20 MLPs")


def _quadrature_nodes(n):
    g = np.linspace(-3, 3, 401 if n == 1 else 41)
    w1 = trapezoid_weights(g)
    if n == 1:
        X, w = g[:, None], w1 * np.exp(-0.5 * g * g)
    else:
        A, B = np.meshgrid(g, g, indexing="ij")
        X = np.column_stack([A.ravel(), B.ravel()])
        w = np.outer(w1, w1).ravel() * np.exp(-0.5 * np.sum(X * X, axis=1))
    tg = np.linspace(0, 1, 21)
    XX = np.repeat(X, len(tg), axis=0)
    TT = np.tile(tg, len(X))
    W = np.repeat(w, len(tg)) * np.tile(trapezoid_weights(tg), len(X))
    return XX, TT, W / W.sum()


def test_criterion_5_projection_exactness():
    worst = {}
    for n in (1, 2):
        X, T, W = _quadrature_nodes(n)
        for k in (1, 2, 4, 8, 16):
            phi = fourier_basis(k, n, seed=k).values(X, T)
            a = np.random.default_rng(k).normal(size=k)
            v = np.einsum("k,mkn->mn", a, phi)
            c = gram_system(phi, v, W, lam=0.0).solve(0.0)
            worst[(n, k)] = rel_err(c, a)
    ok = max(worst.values()) < 1e-6
    detail = ", ".join(f"n={n} k={k}: {e:.1e}" for (n, k), e in worst.items())
    assert record(5, "projection exactness", ok, detail)


def test_criterion_6_metric_oracle():
    mismatches = 0
    for seed in range(10):
        rng = np.random.default_rng(1000 + seed)
        m_real, m_gen = rng.integers(10, 301, size=2)
        kappa = int(rng.integers(1, 6))
        real = rng.normal(size=(m_real, 2))
        near = real[rng.integers(0, m_real, m_gen // 2)]
        gen = np.vstack([near + rng.normal(0, 0.05, near.shape),
                         rng.normal(size=(m_gen - m_gen // 2, 2)) * 3 + 2])
        p, r = precision_recall(real, gen, kappa)
        mismatches += (p != brute_coverage(gen, real, kappa)) + (r != brute_coverage(real, gen, kappa))
    assert record(6, "metric oracle equivalence", mismatches == 0,
                  f"{mismatches} mismatches over 10 cases")


def _dynamic_td(cfg, axis, values, anchor_value, reports):
    sub = copy.deepcopy(cfg)
    sub.experiment.methods = ["dynamic"]
    sub.experiment.splits = ["TD"]
    sub.experiment.seeds = SWEEP_SEEDS
    sub.experiment.plots = False
    cells, _ = run_sweep(sub, axis, [v for v in values if v != anchor_value])
    out = {}
    for v in values:
        if v == anchor_value:
            # the benchmark config is this sweep point; reuse its cells
            out[v] = cell_means(reports, "dynamic", "TD", SWEEP_SEEDS)
        else:
            rows = [c for c in cells if c["value"] == v and c["status"] == "ok"]
            out[v] = tuple(float(np.mean([r[m] for r in rows]))
                           for m in ("precision", "recall", "gen_seconds"))
    return out


def _dynamic_generation_cpu(cfg, ks, repeats=7):
    """Best-of-``repeats`` CPU seconds to generate the TD batch with a trained dynamic
    basis per ``k``.  Runs are interleaved across ``k`` so drift affects all equally;
    the k-dependent share of the cost is a few percent, below one-shot timing noise."""
    ctx = seed_context(cfg, 0)
    gens = {}
    for k in ks:
        sub = apply_axis(cfg, "basis_count", k)
        model = train_method(sub, "dynamic", ctx.train, 0)
        gens[k], _ = make_generator(sub, "dynamic", model, ctx.shots["TD"], ctx.specs["TD"],
                                    ctx.train, 0)
    best = {k: np.inf for k in ks}
    for _ in range(repeats):
        for k in ks:
            start = time.process_time()
            gens[k](ctx.noise["TD"])
            best[k] = min(best[k], time.process_time() - start)
    return [best[k] for k in ks]


def test_criterion_7_ablations(table1):
    cfg, reports, _, _, _ = table1
    assert cfg.train.k == 100 and cfg.data.shots == 500
    ks = _dynamic_td(cfg, "basis_count", [50, 100, 200], 100, reports)
    shots = _dynamic_td(cfg, "shots", [50, 200, 500], 500, reports)
    checks = {}
    for i, name in ((0, "precision"), (1, "recall")):
        spread = max(v[i] for v in ks.values()) - min(v[i] for v in ks.values())
        checks[f"k {name} spread {spread:.3f}<0.1"] = spread < 0.1
        dev = max(abs(v[i] - shots[500][i]) for v in shots.values())
        checks[f"shots {name} max dev {dev:.3f}<=0.15"] = dev <= 0.15
    t = _dynamic_generation_cpu(cfg, (50, 100, 200))
    checks["k time " + "<=".join(f"{v:.3f}s" for v in t)] = t[0] <= t[1] <= t[2]
    for label, res in (("k", ks), ("shots", shots)):
        for v, (p, r, s) in res.items():
            print(f"{label}={v}: P {p:.3f} R {r:.3f} t {s:.2f}s")
    failed = [k for k, ok in checks.items() if not ok]
    assert record(7, "ablation properties", not failed, "; ".join(checks)), failed


INVARIANT_TESTS = [
    # self-normalisation of the importance weights
    "tests/test_dynamic.py::TestConditionalVelocity::test_weights_normalised_and_estimate_bounded",
    "tests/test_dynamic.py::TestConditionalVelocity::test_extreme_log_weight_spread",
    "tests/test_dynamic.py::TestConditionalVelocity::test_translation_consistency",
    # interpolation endpoints and Euler convergence
    "tests/test_flow.py::TestPathBatch::test_endpoints",
    "tests/test_flow.py::TestIntegrate::test_first_order_convergence",
    # Gram symmetry, positive definiteness and projection orthogonality
    "tests/test_basis.py::TestGramSystem::test_symmetric_and_pd",
    "tests/test_basis.py::TestProjection::test_orthogonality_of_residual",
    "tests/test_basis.py::TestProjection::test_permutation_invariance",
    "tests/test_nn.py::TestSolveRidge::test_residual_property",
    # classifier guidance linearity in alpha
    "tests/test_baselines.py::TestClassifierGuidance::test_alpha_linearity",
    "tests/test_baselines.py::TestClassifierGuidance::test_exact_form",
    # backward/forward round trips
    "tests/test_flow.py::TestBackward::test_constant_field_round_trip_is_identity",
    "tests/test_flow.py::TestBackward::test_smooth_field_round_trip_within_euler_error",
    "tests/test_baselines.py::TestFinetune::test_lr_zero_identity_on_parameters",
    # checkpoint round trip
    "tests/test_checkpoint.py::TestRoundTrip",
    # determinism
    "tests/test_basis.py::TestTraining::test_seed_determinism",
    "tests/test_dynamic.py::TestTraining::test_seed_determinism",
    "tests/test_baselines.py::TestUnconditional::test_seed_determinism",
    "tests/test_cli.py::TestTrain::test_rerun_byte_identical_payload",
    "tests/test_experiment.py::TestBenchmark::test_worker_count_independent_output",
    # metric invariances
    "tests/test_metrics.py::TestPrecisionRecall::test_rotation_invariance",
    "tests/test_metrics.py::TestPrecisionRecall::test_swapping_sets_swaps_metrics",
]


def test_criterion_8_invariant_suites():
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           *INVARIANT_TESTS], cwd=ROOT, capture_output=True, text=True)
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr
    assert record(8, "invariant suites", proc.returncode == 0,
                  f"{len(INVARIANT_TESTS)} suites: {summary}"), proc.stdout[-3000:]
