"""Learned velocity bases, Monte-Carlo inner products and the static / temporal
least-squares projections, with the training loops that fit the basis.

Inner products follow the mean-squared-error geometry
``<f, g> = (1/n) E[f(X)^T g(X)]`` with ``X`` drawn from the path distribution of the
target, estimated through ``(x1 - x0)`` pairs so the true field is never needed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DivergenceError, ShapeError
from .flow import PathBatch, VelocityField, make_path_batch
from .nn import AdamState, Mlp, adam_step, solve_ridge
from .utils import check_samples, derive_rng, time_column


@dataclass
class BasisSet:
    """``k`` vector fields ``R^n x [0,1] -> R^n`` as the heads of one network.

    The network maps ``[x, t]`` to ``n * k`` outputs laid out dimension-major:
    column ``d*k + i`` is component ``d`` of field ``i``, so a batch of outputs
    reshapes to ``(m*n, k)`` without copying.  ``mean_field`` is the optional
    residual-mode average field.
    """

    net: Mlp
    k: int
    n: int
    mean_field: Mlp | None = None
    loss_history: list = field(default_factory=list)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("basis needs k >= 1")
        if self.net.d_in != self.n + 1 or self.net.d_out != self.k * self.n:
            raise ShapeError(f"basis net maps {self.net.d_in}->{self.net.d_out}, expected "
                             f"{self.n + 1}->{self.k * self.n}")
        if self.mean_field is not None and (self.mean_field.d_in, self.mean_field.d_out) != (
                self.n + 1, self.n):
            raise ShapeError("mean field must map n+1 -> n")

    @property
    def residual(self):
        return self.mean_field is not None

    def inputs(self, x, t):
        return np.hstack([x, time_column(t, x.shape[0])])

    def values(self, x, t):
        """Basis values, shape ``(m, k, n)``."""
        x = check_samples(x, self.n, name="x")
        out = self.net.forward(self.inputs(x, t))
        return out.reshape(-1, self.n, self.k).transpose(0, 2, 1)

    def mean(self, x, t):
        if self.mean_field is None:
            return np.zeros_like(x)
        return self.mean_field.forward(self.inputs(x, t))


@dataclass
class FunctionBasis:
    """Basis given by an explicit callable ``fn(x, t_col) -> (m, k, n)``.

    Used for analytic or hand-constructed bases; it has no trainable parameters.
    """

    fn: object
    k: int
    n: int
    mean_fn: object = None

    @property
    def residual(self):
        return self.mean_fn is not None

    def values(self, x, t):
        x = np.asarray(x, dtype=np.float64)
        phi = np.asarray(self.fn(x, time_column(t, x.shape[0])), dtype=np.float64)
        if phi.shape != (x.shape[0], self.k, self.n):
            raise ShapeError(f"basis callable returned {phi.shape}, expected "
                             f"{(x.shape[0], self.k, self.n)}")
        return phi

    def mean(self, x, t):
        if self.mean_fn is None:
            return np.zeros_like(x)
        return np.asarray(self.mean_fn(x, time_column(t, x.shape[0])), dtype=np.float64)


@dataclass
class GramSystem:
    G: np.ndarray
    b: np.ndarray
    sample_count: int
    lam: float = 1e-6

    def solve(self, lam=None):
        return solve_ridge(self.G, self.b, self.lam if lam is None else lam)


@dataclass
class CoefficientVector:
    c: np.ndarray
    mode: str = "static"
    t: float | None = None
    source: object = None


@dataclass
class TrainConfig:
    gradient_steps: int = 1000
    batch_size: int = 512
    lr: float = 1e-3
    ridge: float = 1e-6
    k: int = 100
    hidden: tuple = (64, 64, 64)
    activation: str = "tanh"
    seed: int = 0
    residual_mode: bool = False
    detach_coefficients: bool = False
    distributions_per_step: int = 8

    def __post_init__(self):
        for name in ("gradient_steps", "batch_size", "k", "distributions_per_step"):
            if getattr(self, name) < (0 if name == "gradient_steps" else 1):
                raise ValueError(f"{name} must be positive")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")
        self.hidden = tuple(int(h) for h in self.hidden)


def flat(phi):
    """``(m, k, n)`` basis values as the ``(m*n, k)`` design matrix."""
    m, k, n = phi.shape
    return phi.transpose(0, 2, 1).reshape(m * n, k)


def gram_system(phi, u, weights=None, lam=1e-6):
    """Gram matrix and right-hand side from basis values ``phi (m,k,n)`` and target
    velocities ``u (m,n)`` under sample weights (uniform ``1/m`` by default)."""
    m, k, n = phi.shape
    if m == 0:
        raise ValueError("empty batch")
    w = np.full(m, 1.0 / m) if weights is None else np.asarray(weights, dtype=np.float64)
    P = flat(phi)
    Pw = P * np.repeat(w, n)[:, None]
    G = Pw.T @ P / n
    G = 0.5 * (G + G.T)
    b = Pw.T @ u.reshape(m * n) / n
    return GramSystem(G, b, m, lam)


def estimate_gram_rhs(basis, pb: PathBatch, restrict_t=None, lam=1e-6):
    """Monte-Carlo Gram system for one path batch.

    ``u = x1 - x0`` stands in for the unknown velocity (tower property); in residual
    mode the mean field is subtracted first.
    """
    if pb.m == 0:
        raise ValueError("empty batch")
    if restrict_t is not None and not np.all(pb.t == restrict_t):
        raise ValueError("restrict_t given but batch times differ from it")
    phi = basis.values(pb.xt, pb.t)
    u = pb.u - basis.mean(pb.xt, pb.t) if basis.residual else pb.u
    return gram_system(phi, u, lam=lam)


def project_static(basis, dataset, m_eval=1024, seed=None, lam=1e-6):
    """Coefficients of the target's field under the joint ``(t, X_t)`` inner product."""
    pb = make_path_batch(dataset, seed, t=None, batch_size=m_eval)
    c = estimate_gram_rhs(basis, pb, lam=lam).solve()
    return CoefficientVector(c, "static", None, getattr(dataset, "spec", None))


def project_temporal(basis, dataset, t, m_eval=1024, seed=None, lam=1e-6):
    """Coefficients at one time ``t`` under the ``X_t | t`` inner product."""
    if not 0.0 <= t < 1.0:
        raise ValueError(f"temporal projection needs 0 <= t < 1, got {t}")
    pb = make_path_batch(dataset, seed, t=t, batch_size=m_eval)
    c = estimate_gram_rhs(basis, pb, restrict_t=float(t), lam=lam).solve()
    return CoefficientVector(c, "temporal", float(t), getattr(dataset, "spec", None))


def combine(basis, c, x, t):
    """``mean(x,t) + sum_i c_i g^i(x,t)``."""
    out = c @ basis.values(x, t)
    if basis.residual:
        out = out + basis.mean(x, t)
    return out


class StaticProjectedField(VelocityField):
    tag = "static"

    def __init__(self, basis, c):
        self.basis = basis
        self.c = np.asarray(c.c if isinstance(c, CoefficientVector) else c, dtype=np.float64)

    def evaluate(self, x, t):
        return combine(self.basis, self.c, x, t)


class TemporalProjectedField(VelocityField):
    """Re-projects once per distinct ``t`` (i.e. once per integrator step) and
    reuses the coefficients for every row at that time."""

    tag = "temporal"

    def __init__(self, basis, shots, m_eval=1024, seed=None, lam=1e-6):
        self.basis = basis
        self.shots = shots
        self.m_eval = m_eval
        self.seed = 0 if seed is None else seed
        self.lam = lam
        self._cache = (None, None)

    def coefficients(self, t):
        if self._cache[0] != t:
            key = int(round(t * 2**40))
            rng = derive_rng(self.seed, "temporal-step", key)
            cv = project_temporal(self.basis, self.shots, min(t, np.nextafter(1.0, 0.0)),
                                  self.m_eval, rng, self.lam)
            self._cache = (t, cv.c)
        return self._cache[1]

    def evaluate(self, x, t):
        return combine(self.basis, self.coefficients(t), x, t)


def make_projected_field(basis, mode="static", c=None, shots=None, m_eval=1024, seed=None,
                         lam=1e-6):
    if mode == "static":
        if c is None:
            if shots is None:
                raise ValueError("static field needs coefficients or shots")
            c = project_static(basis, shots, m_eval, seed, lam)
        return StaticProjectedField(basis, c)
    if mode == "temporal":
        if shots is None:
            raise ValueError("temporal field needs shots")
        return TemporalProjectedField(basis, shots, m_eval, seed, lam)
    raise ValueError(f"unknown projection mode {mode!r}")


def projection_loss_grads(phi, u, lam, weights=None, detach=False):
    """Loss ``sum_s w_s |u_s - phi_s^T c|^2 / n`` with ``c`` the ridge projection of
    ``u`` on the same batch, and its gradients w.r.t. ``phi`` and ``u``.

    Unless ``detach``, gradients include the dependence of ``c`` on ``phi`` and ``u``
    through ``G``, ``b`` and the solve (``dc = A^{-1} (db - dG c)``).
    Returns ``(loss, c, dphi, du)``.
    """
    m, k, n = phi.shape
    w = np.full(m, 1.0 / m) if weights is None else weights
    P = flat(phi)
    wf = np.repeat(w, n)
    uf = u.reshape(m * n)
    Pw = P * wf[:, None]
    G = Pw.T @ P / n
    G = 0.5 * (G + G.T)
    c = solve_ridge(G, Pw.T @ uf / n, lam)
    r = P @ c - uf
    loss = float(wf @ (r * r) / n)
    wr = (2.0 / n) * wf * r
    dP = np.outer(wr, c)
    du = -wr
    if not detach:
        gb = solve_ridge(G, P.T @ wr, lam)
        gG = -np.outer(gb, c)
        dP += (wf / n)[:, None] * (np.outer(uf, gb) + P @ (gG + gG.T))
        du = du + (wf / n) * (P @ gb)
    dphi = dP.reshape(m, n, k).transpose(0, 2, 1)
    return loss, c, dphi, du.reshape(m, n)


def init_basis(n, cfg, seed_label):
    net = Mlp.init([n + 1, *cfg.hidden, n * cfg.k], derive_rng(cfg.seed, "init", seed_label),
                   cfg.activation)
    mean = None
    if cfg.residual_mode:
        mean = Mlp.init([n + 1, *cfg.hidden, n], derive_rng(cfg.seed, "init-mean", seed_label),
                        cfg.activation)
    return BasisSet(net, cfg.k, n, mean)


def _choose_distributions(rng, count, per_step):
    if count <= per_step:
        return np.arange(count)
    return np.sort(rng.choice(count, size=per_step, replace=False))


def _train_projection(datasets, cfg, single_t, label):
    data = [check_samples(d, name="dataset") for d in datasets]
    if len(data) < 2:
        raise ValueError("training needs at least two distributions")
    n = data[0].shape[1]
    basis = init_basis(n, cfg, label)
    rng = derive_rng(cfg.seed, "train", label)
    params = basis.net.params + (basis.mean_field.params if basis.residual else [])
    opt = AdamState(lr=cfg.lr)
    k = cfg.k
    for step in range(cfg.gradient_steps):
        chosen = _choose_distributions(rng, len(data), cfg.distributions_per_step)
        batches = [make_path_batch(data[i], rng, t=rng.uniform() if single_t else None,
                                   batch_size=cfg.batch_size) for i in chosen]
        X = np.vstack([basis.inputs(pb.xt, pb.t) for pb in batches])
        out, cache = basis.net.forward_cached(X)
        phi = out.reshape(-1, n, k).transpose(0, 2, 1)
        if basis.residual:
            mv, mcache = basis.mean_field.forward_cached(X)
        dphi = np.empty_like(phi)
        du_all = np.empty((X.shape[0], n))
        total = 0.0
        start = 0
        for i, pb in zip(chosen, batches):
            sl = slice(start, start + pb.m)
            start += pb.m
            u = pb.u - mv[sl] if basis.residual else pb.u
            loss, _, dphi[sl], du_all[sl] = projection_loss_grads(
                phi[sl], u, cfg.ridge, detach=cfg.detach_coefficients)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at step {step}, distribution {i}",
                                      step=step, distribution=int(i))
            total += loss
        grads = basis.net.backward(cache, dphi.transpose(0, 2, 1).reshape(-1, n * k))[0]
        if basis.residual:
            grads += basis.mean_field.backward(mcache, -du_all)[0]
        adam_step(params, grads, opt)
        basis.loss_history.append(total)
    return basis


def train_static(datasets, cfg=TrainConfig()):
    """Fit the basis so per-distribution static projections reproduce each field."""
    return _train_projection(datasets, cfg, single_t=False, label="static")


def train_temporal(datasets, cfg=TrainConfig()):
    """Same as :func:`train_static`, but every distribution's batch shares one time."""
    return _train_projection(datasets, cfg, single_t=True, label="temporal")


def coefficient_distances(basis, datasets, m_eval=1024, seed=None, lam=1e-6):
    """Pairwise Euclidean distances between static coefficient vectors.

    A near-zero off-diagonal entry means two distributions share a representation.
    """
    cs = np.array([project_static(basis, d, m_eval, derive_rng(seed, "coef", i), lam).c
                   for i, d in enumerate(datasets)])
    diff = cs[:, None, :] - cs[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))
