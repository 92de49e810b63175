"""State- and time-dependent projection.

``E[X1 - X0 | X_t = x]`` is estimated by self-normalised importance sampling over
the target samples: each ``x1`` implies the unique noise point
``x0* = (x - t x1) / (1 - t)`` and is weighted by the standard-normal density of
that point.  The estimate is then projected onto the span of the basis values at
``(x, t)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .basis import init_basis
from .exceptions import DivergenceError
from .flow import VelocityField, make_path_batch
from .nn import AdamState, adam_step, solve_ridge_batched
from .utils import check_samples, derive_rng, time_column

LOG_2PI = np.log(2 * np.pi)


@dataclass
class ConditionalVelocityEstimate:
    v_hat: np.ndarray
    log_weights: np.ndarray
    effective_sample_size: float
    degenerate: bool


@dataclass(frozen=True)
class DynamicConfig:
    t_eps: float = 1e-2
    anchor_subsample: int = 64
    ess_floor: float = 1.5
    chunk: int = 256

    def __post_init__(self):
        if not 0.0 < self.t_eps < 1.0:
            raise ValueError("t_eps must lie in (0, 1)")
        if self.anchor_subsample < 1:
            raise ValueError("anchor_subsample must be >= 1")

    @property
    def t_clamp(self):
        return 1.0 - self.t_eps


def _weights(x, t, x1):
    """Log-weights ``(B, m)``, normalised weights and the implied noise points."""
    tc = time_column(t, x.shape[0])[:, :, None]
    x0s = (x[:, None, :] - tc * x1[None, :, :]) / (1.0 - tc)
    n = x.shape[1]
    logw = -0.5 * np.sum(x0s * x0s, axis=2) - 0.5 * n * LOG_2PI
    w = np.exp(logw - logsumexp(logw, axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    return logw, w, x0s


def conditional_velocity_batch(x, t, targets, ess_floor=1.5):
    """Vectorised estimator for rows of ``x``; ``t`` is a scalar or one time per row.

    Returns ``(v_hat (B,n), ess (B,), degenerate (B,))``.  Rows whose effective
    sample size falls below ``ess_floor`` use the single heaviest target instead.
    """
    x = np.asarray(x, dtype=np.float64)
    x1 = check_samples(targets, x.shape[1], name="targets")
    tt = np.asarray(t, dtype=np.float64)
    if np.any(tt >= 1.0) or np.any(tt < 0.0):
        raise ValueError("conditional velocity needs 0 <= t < 1")
    _, w, x0s = _weights(x, t, x1)
    v = np.einsum("bm,bmn->bn", w, x1[None, :, :] - x0s)
    ess = 1.0 / np.sum(w * w, axis=1)
    degenerate = ess < ess_floor
    if degenerate.any():
        rows = np.flatnonzero(degenerate)
        top = np.argmax(w[rows], axis=1)
        v[rows] = x1[top] - x0s[rows, top]
    return v, ess, degenerate


def conditional_velocity(x, t, targets, ess_floor=1.5):
    """Estimate ``E[X1 - X0 | X_t = x]`` at one point from target samples."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if not 0.0 <= t < 1.0:
        raise ValueError(f"conditional velocity needs 0 <= t < 1, got {t}")
    x1 = check_samples(targets, x.shape[1], name="targets")
    logw, _, _ = _weights(x, t, x1)
    v, ess, deg = conditional_velocity_batch(x, t, x1, ess_floor)
    return ConditionalVelocityEstimate(v[0], logw[0], float(ess[0]), bool(deg[0]))


def _local_system(phi, v, n):
    G = phi @ phi.transpose(0, 2, 1) / n
    G = 0.5 * (G + G.transpose(0, 2, 1))
    b = (phi @ v[:, :, None])[:, :, 0] / n
    return G, b


def _combine(phi, c):
    return (c[:, None, :] @ phi)[:, 0, :]


def _local_solve(phi, v, lam):
    """Row-wise ``(phi phi^T / n + lam I)^{-1} phi v / n``.

    Each local Gram matrix has rank at most ``n``, so for ``k > n`` the identity
    ``(phi phi^T / n + lam I)^{-1} phi = phi (phi^T phi / n + lam I)^{-1}`` turns
    the ``k x k`` solve into an ``n x n`` one.
    """
    B, k, n = phi.shape
    if k <= n:
        G, b = _local_system(phi, v, n)
        return solve_ridge_batched(G, b, lam)
    H = phi.transpose(0, 2, 1) @ phi / n
    H = 0.5 * (H + H.transpose(0, 2, 1))
    a = solve_ridge_batched(H, v / n, lam)
    return (phi @ a[:, :, None])[:, :, 0]


def project_dynamic(basis, x, t, targets, lam=1e-6, ess_floor=1.5):
    """Coefficients of the localised least-squares problem at a single ``(x, t)``."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    est = conditional_velocity(x[0], t, targets, ess_floor)
    v = est.v_hat[None, :] - basis.mean(x, t)
    phi = basis.values(x, t)
    return _local_solve(phi, v, lam)[0]


def project_dynamic_batch(basis, x, t, targets, lam=1e-6, ess_floor=1.5):
    """Row-wise localised projection.  Returns ``(c (B,k), phi (B,k,n), v_hat (B,n))``."""
    v_hat, _, _ = conditional_velocity_batch(x, t, targets, ess_floor)
    phi = basis.values(x, t)
    v = v_hat - basis.mean(x, t) if basis.residual else v_hat
    return _local_solve(phi, v, lam), phi, v_hat


class DynamicProjectedField(VelocityField):
    tag = "dynamic"

    def __init__(self, basis, targets, cfg=DynamicConfig(), lam=1e-6):
        self.basis = basis
        self.targets = check_samples(targets, basis.n, name="targets")
        self.cfg = cfg
        self.lam = lam

    def evaluate(self, x, t):
        t = min(t, self.cfg.t_clamp)
        out = np.empty_like(x)
        for s in range(0, x.shape[0], self.cfg.chunk):
            xs = x[s:s + self.cfg.chunk]
            c, phi, _ = project_dynamic_batch(self.basis, xs, t, self.targets, self.lam,
                                              self.cfg.ess_floor)
            out[s:s + self.cfg.chunk] = _combine(phi, c) + self.basis.mean(xs, t)
        return out


def make_dynamic_field(basis, targets, cfg=DynamicConfig(), lam=1e-6):
    return DynamicProjectedField(basis, targets, cfg, lam)


def local_projection_loss_grads(phi, u, lam, weights, detach=False):
    """Weighted sum of per-row losses ``|u_b - phi_b^T c_b|^2 / n`` where each ``c_b``
    solves its own one-point least-squares problem; gradients w.r.t. ``phi`` and ``u``.

    Returns ``(loss, c, dphi, du)``.
    """
    B, k, n = phi.shape
    c = _local_solve(phi, u, lam)
    r = _combine(phi, c) - u
    loss = float(np.sum(weights * np.sum(r * r, axis=1)) / n)
    wr = (2.0 / n) * weights[:, None] * r
    dphi = c[:, :, None] * wr[:, None, :]
    du = -wr
    if not detach:
        # gb = (G + lam I)^{-1} phi wr; the gradient through G is -(gb c^T + c gb^T)
        gb = _local_solve(phi, wr * n, lam)
        gphi = _combine(phi, gb)
        # gb u^T - gb (phi^T c)^T = -gb r^T
        dphi -= (gb[:, :, None] * r[:, None, :] + c[:, :, None] * gphi[:, None, :]) / n
        du += gphi / n
    return loss, c, dphi, du


def train_dynamic(datasets, cfg, dcfg=DynamicConfig()):
    """Fit the basis against localised projections at randomly drawn anchor states."""
    data = [check_samples(d, name="dataset") for d in datasets]
    if len(data) < 2:
        raise ValueError("training needs at least two distributions")
    n = data[0].shape[1]
    basis = init_basis(n, cfg, "dynamic")
    rng = derive_rng(cfg.seed, "train", "dynamic")
    params = basis.net.params + (basis.mean_field.params if basis.residual else [])
    opt = AdamState(lr=cfg.lr)
    k = cfg.k
    count = len(data)
    for step in range(cfg.gradient_steps):
        chosen = (np.arange(count) if count <= cfg.distributions_per_step else
                  np.sort(rng.choice(count, cfg.distributions_per_step, replace=False)))
        xs, ts, vs, owner = [], [], [], []
        for i in chosen:
            pb = make_path_batch(data[i], rng, batch_size=cfg.batch_size)
            a = min(dcfg.anchor_subsample, pb.m)
            idx = rng.choice(pb.m, size=a, replace=False)
            xa = pb.xt[idx]
            ta = np.minimum(pb.t[idx], dcfg.t_clamp)
            v_hat, _, _ = conditional_velocity_batch(xa, ta, data[i], dcfg.ess_floor)
            xs.append(xa)
            ts.append(ta)
            vs.append(v_hat)
            owner.append(np.full(a, i))
        xa, ta, v_hat, owner = (np.vstack(xs), np.concatenate(ts), np.vstack(vs),
                                np.concatenate(owner))
        X = basis.inputs(xa, ta)
        out, cache = basis.net.forward_cached(X)
        phi = out.reshape(-1, n, k).transpose(0, 2, 1)
        u = v_hat
        if basis.residual:
            mv, mcache = basis.mean_field.forward_cached(X)
            u = v_hat - mv
        weights = np.empty(len(owner))
        for i in chosen:
            sel = owner == i
            weights[sel] = 1.0 / sel.sum()
        finite = np.all(np.isfinite(phi), axis=(1, 2)) & np.all(np.isfinite(u), axis=1)
        if not finite.all():
            bad = int(np.argmin(finite))
            raise DivergenceError(f"non-finite loss at step {step}, distribution "
                                  f"{int(owner[bad])}, anchor {bad}", step=step,
                                  distribution=int(owner[bad]), anchor=bad)
        loss, _, dphi, du = local_projection_loss_grads(phi, u, cfg.ridge, weights,
                                                        cfg.detach_coefficients)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss at step {step}", step=step)
        grads = basis.net.backward(cache, dphi.transpose(0, 2, 1).reshape(-1, n * k))[0]
        if basis.residual:
            grads += basis.mean_field.backward(mcache, -du)[0]
        adam_step(params, grads, opt)
        basis.loss_history.append(loss)
    return basis
