"""scikit-learn style wrapper around basis training, projection and sampling."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .basis import TrainConfig, make_projected_field, project_static, project_temporal
from .basis import train_static, train_temporal
from .dynamic import DynamicConfig, make_dynamic_field, train_dynamic
from .flow import IntegratorConfig, integrate
from .utils import derive_rng

VARIANTS = ("static", "temporal", "dynamic")


class FunctionProjectionFlow(BaseEstimator):
    """Learn a velocity basis from labelled groups of samples, then generate from a new
    distribution given only its samples.

    ``fit(X, y)`` treats each distinct label in ``y`` as one training distribution.
    ``sample(shots, n_samples)`` adapts to ``shots`` and integrates fresh noise.
    ``transform(shots)`` returns the adapted coefficients: one vector for the static
    variant, one row per integrator step for the temporal variant.
    """

    def __init__(self, variant="dynamic", k=100, gradient_steps=1000, batch_size=512,
                 lr=1e-3, ridge=1e-6, hidden=(64, 64, 64), m_eval=1024, steps=100,
                 residual_mode=False, random_state=0):
        self.variant = variant
        self.k = k
        self.gradient_steps = gradient_steps
        self.batch_size = batch_size
        self.lr = lr
        self.ridge = ridge
        self.hidden = hidden
        self.m_eval = m_eval
        self.steps = steps
        self.residual_mode = residual_mode
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(gradient_steps=self.gradient_steps, batch_size=self.batch_size,
                           lr=self.lr, ridge=self.ridge, k=self.k, hidden=self.hidden,
                           seed=self.random_state, residual_mode=self.residual_mode)

    def fit(self, X, y):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ValueError("y needs one group label per row of X")
        self.groups_ = np.unique(y)
        if len(self.groups_) < 2:
            raise ValueError("need at least two groups to learn a basis")
        data = [X[y == g] for g in self.groups_]
        trainer = {"static": train_static, "temporal": train_temporal,
                   "dynamic": lambda d, c: train_dynamic(d, c, DynamicConfig())}[self.variant]
        self.basis_ = trainer(data, self._train_config())
        self.n_features_in_ = X.shape[1]
        return self

    def _shots(self, shots):
        check_is_fitted(self, "basis_")
        return check_array(shots, dtype=np.float64)

    def transform(self, shots):
        shots = self._shots(shots)
        seed = derive_rng(self.random_state, "transform")
        if self.variant == "static":
            return project_static(self.basis_, shots, self.m_eval, seed, self.ridge).c
        if self.variant == "temporal":
            dt = 1.0 / self.steps
            return np.array([project_temporal(self.basis_, shots, j * dt, self.m_eval,
                                              derive_rng(self.random_state, "transform", j),
                                              self.ridge).c for j in range(self.steps)])
        raise ValueError("dynamic coefficients depend on the state; use sample()")

    def field(self, shots):
        shots = self._shots(shots)
        if self.variant == "dynamic":
            return make_dynamic_field(self.basis_, shots, lam=self.ridge)
        return make_projected_field(self.basis_, self.variant, shots=shots, m_eval=self.m_eval,
                                    seed=self.random_state, lam=self.ridge)

    def sample(self, shots, n_samples=1000, random_state=None):
        field = self.field(shots)
        seed = self.random_state if random_state is None else random_state
        x0 = derive_rng(seed, "sample").standard_normal((n_samples, self.n_features_in_))
        return integrate(field, x0, IntegratorConfig(steps=self.steps))
