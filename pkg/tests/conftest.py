"""Shared fixtures and independent numerical oracles."""
import numpy as np
import pytest
from scipy.integrate import trapezoid

from fpfm.basis import FunctionBasis, TrainConfig
from fpfm.nn import Mlp

# 1-D bimodal target used by the quadrature oracles
MODES = np.array([-2.0, 2.0])
SIGMA = 0.1


def bimodal_samples(m, rng):
    comp = rng.integers(0, 2, size=m)
    return (MODES[comp] + SIGMA * rng.standard_normal(m))[:, None]


def bimodal_density(x1):
    z = (x1[..., None] - MODES) / SIGMA
    return 0.5 * np.sum(np.exp(-0.5 * z * z), axis=-1) / (SIGMA * np.sqrt(2 * np.pi))


def quadrature_velocity(x, t, n_grid=200001):
    """E[X1 - X0 | X_t = x] by integrating over x1 on a dense grid:
    (x1 - x0*) N(x0*) p(x1) normalised by N(x0*) p(x1), x0* = (x - t x1)/(1 - t)."""
    x1 = np.linspace(-3.5, 3.5, n_grid)
    x0 = (x - t * x1) / (1.0 - t)
    w = np.exp(-0.5 * x0 * x0) * bimodal_density(x1)
    return trapezoid((x1 - x0) * w, x1) / trapezoid(w, x1)


def closed_form_velocity(x, t):
    """Same conditional expectation from Gaussian conjugacy, per mixture component."""
    var_x = (1 - t) ** 2 + (t * SIGMA) ** 2
    logp = -0.5 * (x - t * MODES) ** 2 / var_x
    resp = np.exp(logp - logp.max())
    resp /= resp.sum()
    # E[X1 | X_t = x, comp] and E[X0 | X_t = x, comp]
    e1 = MODES + t * SIGMA ** 2 / var_x * (x - t * MODES)
    e0 = (1 - t) / var_x * (x - t * MODES)
    return float(np.sum(resp * (e1 - e0)))


def path_density(x, t):
    """Marginal density of X_t for the bimodal target, vectorised over x and t."""
    var = (1 - t) ** 2 + (t * SIGMA) ** 2
    out = 0.0
    for mu in MODES:
        out = out + 0.5 * np.exp(-0.5 * (x - t * mu) ** 2 / var) / np.sqrt(2 * np.pi * var)
    return out


def trapezoid_weights(grid):
    w = np.zeros_like(grid)
    d = np.diff(grid)
    w[:-1] += d / 2
    w[1:] += d / 2
    return w


def fourier_basis(k, n, seed=0):
    """Smooth, well-conditioned analytic basis: random-frequency sinusoids in (x, t)."""
    rng = np.random.default_rng(seed)
    freq = rng.normal(0.0, 1.0, size=(k, n, n + 1))
    phase = rng.uniform(0, 2 * np.pi, size=(k, n))

    def fn(x, tc):
        z = np.hstack([x, tc])
        return np.cos(np.einsum("knd,md->mkn", freq, z) + phase[None])

    return FunctionBasis(fn, k, n)


def random_mlp(rng, d_in=None, d_out=None, activation="tanh"):
    d_in = d_in or int(rng.integers(1, 5))
    d_out = d_out or int(rng.integers(1, 4))
    hidden = [int(h) for h in rng.integers(2, 7, size=int(rng.integers(1, 4)))]
    net = Mlp.init([d_in, *hidden, d_out], rng, activation)
    for b in net.biases:
        b += rng.normal(0, 0.3, size=b.shape)
    return net


def fd_grad(fn, arr, h=1e-6):
    """Central finite differences of scalar ``fn()`` w.r.t. ``arr`` (mutated in place)."""
    g = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + h
        up = fn()
        arr[idx] = old - h
        down = fn()
        arr[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


@pytest.fixture
def small_cfg():
    return TrainConfig(gradient_steps=5, batch_size=64, k=6, hidden=(16, 16), seed=0)


SMALL_INI = """
[data]
n_train_arcs = 4
train_samples = 100
shots = 100
n_real = 100
n_generated = 100
[train]
gradient_steps = 50
batch_size = 64
k = 4
hidden = 8, 8
m_eval = 64
[dynamic]
gradient_steps = 5
[integrator]
steps = 20
[baselines]
gradient_steps = 50
batch_size = 64
hidden = 8, 8
finetune_steps = 10
classifier_steps = 10
secondary_steps = 10
backward_steps = 20
[experiment]
methods = static
seeds = 0
plots = false
"""


def small_ini(tmp_path, extra="", name="small.ini"):
    """Write a fast config; ``extra`` lines are appended (later keys must be new sections)."""
    path = tmp_path / name
    path.write_text(SMALL_INI + extra)
    return path


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
