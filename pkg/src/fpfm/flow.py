"""Flow-matching primitives: noise, the linear interpolation path, velocity
fields and explicit Euler integration."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DivergenceError
from .utils import check_samples, derive_rng, time_column


def sample_noise(m, n, seed=None):
    """``(m, n)`` i.i.d. standard normal draws."""
    if m < 0 or n < 1:
        raise ValueError(f"invalid noise shape ({m}, {n})")
    return derive_rng(seed).standard_normal((m, n))


@dataclass(frozen=True)
class PathBatch:
    """Noise/data pairs with their interpolated states and target velocities."""

    x0: np.ndarray
    x1: np.ndarray
    t: np.ndarray
    xt: np.ndarray
    u: np.ndarray

    @property
    def m(self):
        return self.x0.shape[0]

    @property
    def n(self):
        return self.x0.shape[1]


def path_batch(x0, x1, t):
    """Build the batch ``xt = (1-t) x0 + t x1``, ``u = x1 - x0`` from explicit pairs."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    tc = time_column(t, x0.shape[0])
    xt = (1.0 - tc) * x0 + tc * x1
    return PathBatch(x0, x1, tc[:, 0].copy(), xt, x1 - x0)


def make_path_batch(data, seed=None, t=None, batch_size=None):
    """Draw noise (and optionally resample data rows) and form a :class:`PathBatch`.

    ``t=None`` draws one uniform time per row; a float shares that time across the
    batch.  ``batch_size`` resamples rows of ``data`` with replacement; by default
    every row is used once.
    """
    x1 = check_samples(data, name="dataset")
    rng = derive_rng(seed)
    if batch_size is not None:
        x1 = x1[rng.integers(0, x1.shape[0], size=batch_size)]
    m, n = x1.shape
    x0 = rng.standard_normal((m, n))
    tt = rng.uniform(0.0, 1.0, size=m) if t is None else float(t)
    return path_batch(x0, x1, tt)


class VelocityField:
    """A map ``(x, t) -> R^n`` over a batch of rows; subclasses implement :meth:`evaluate`."""

    tag = "field"

    def __call__(self, x, t):
        return self.evaluate(np.asarray(x, dtype=np.float64), float(t))

    def evaluate(self, x, t):
        raise NotImplementedError


class FunctionField(VelocityField):
    def __init__(self, fn, tag="function"):
        self.fn = fn
        self.tag = tag

    def evaluate(self, x, t):
        return np.asarray(self.fn(x, t), dtype=np.float64)


class ZeroField(VelocityField):
    tag = "zero"

    def evaluate(self, x, t):
        return np.zeros_like(x)


class NetField(VelocityField):
    """Velocity given by an :class:`~fpfm.nn.Mlp` on ``[x, t, *extra]``."""

    def __init__(self, net, extra=(), tag="net"):
        self.net = net
        self.extra = np.atleast_1d(np.asarray(extra, dtype=np.float64))
        self.tag = tag

    def inputs(self, x, t):
        m = x.shape[0]
        cols = [x, time_column(t, m)]
        if self.extra.size:
            cols.append(np.broadcast_to(self.extra, (m, self.extra.size)))
        return np.hstack(cols)

    def evaluate(self, x, t):
        return self.net.forward(self.inputs(x, t))


@dataclass(frozen=True)
class IntegratorConfig:
    steps: int = 100
    t_max: float = 1.0
    scheme: str = "euler"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("integrator needs steps >= 1")
        if not 0.0 < self.t_max <= 1.0:
            raise ValueError("t_max must lie in (0, 1]")
        if self.scheme != "euler":
            raise ValueError(f"unsupported scheme {self.scheme!r}")


def integrate(field, x0, cfg=IntegratorConfig()):
    """Explicit Euler from ``t=0`` to ``t_max``: ``x <- x + dt * field(x, j*dt)``."""
    x = np.array(x0, dtype=np.float64, copy=True)
    dt = cfg.t_max / cfg.steps
    for j in range(cfg.steps):
        v = field(x, j * dt)
        if not np.all(np.isfinite(v)):
            raise DivergenceError(f"velocity field returned non-finite values at step {j}",
                                  step=j)
        x = x + dt * v
    return x


def integrate_backward(field, x1, cfg=IntegratorConfig()):
    """Euler from ``t_max`` back to 0 with negated steps, the field sampled at the
    right end of each interval so a forward pass over the same grid retraces it.

    Raises :class:`DivergenceError` naming the first non-finite row.
    """
    x = np.array(x1, dtype=np.float64, copy=True)
    dt = cfg.t_max / cfg.steps
    for j in range(cfg.steps, 0, -1):
        x = x - dt * field(x, j * dt)
        bad = ~np.all(np.isfinite(x), axis=1)
        if bad.any():
            idx = int(np.flatnonzero(bad)[0])
            raise DivergenceError(f"backward integration diverged for sample {idx} at step {j}",
                                  step=j, sample=idx)
    return x
