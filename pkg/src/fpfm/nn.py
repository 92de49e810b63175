"""Dense numerical kernel: a numpy MLP with hand-written reverse mode, Adam,
and ridge-regularised symmetric solves.

Matrices are plain ``float64`` numpy arrays in row-major layout; a batch is
``(m, d)``.  Weights are stored ``(d_in, d_out)`` so that a layer is
``h @ W + b``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .exceptions import ShapeError, SingularSystemError

PIVOT_TOL = 1e-12
SYMMETRY_TOL = 1e-9


def _tanh_grad(out):
    return 1.0 - out * out


def _relu_grad(out):
    return (out > 0.0).astype(out.dtype)


def _identity_grad(out):
    return np.ones_like(out)


# activation(x) and its derivative expressed through the activation output
ACTIVATIONS = {
    "tanh": (np.tanh, _tanh_grad),
    "relu": (lambda z: np.maximum(z, 0.0), _relu_grad),
    "identity": (lambda z: z, _identity_grad),
}


@dataclass
class Mlp:
    """Fully connected network; the activation is applied to every hidden layer,
    the output layer is linear."""

    weights: list
    biases: list
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ShapeError(f"layer {i}: weight {W.shape} incompatible with bias {b.shape}")
            if i and self.weights[i - 1].shape[1] != W.shape[0]:
                raise ShapeError(f"layer {i}: input dim {W.shape[0]} != previous output dim "
                                 f"{self.weights[i - 1].shape[1]}")

    @classmethod
    def init(cls, layer_dims, rng, activation="tanh", output_scale=1.0):
        """Glorot-normal weights, zero biases.  ``output_scale`` shrinks the last layer."""
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        weights, biases = [], []
        dims = list(layer_dims)
        if len(dims) < 2:
            raise ShapeError("layer_dims needs at least input and output dims")
        for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            std = np.sqrt(2.0 / (d_in + d_out))
            if i == len(dims) - 2:
                std *= output_scale
            weights.append(rng.normal(0.0, std, size=(d_in, d_out)))
            biases.append(np.zeros(d_out))
        return cls(weights, biases, activation)

    @property
    def layer_dims(self):
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def d_in(self):
        return self.weights[0].shape[0]

    @property
    def d_out(self):
        return self.weights[-1].shape[1]

    @property
    def params(self):
        """Parameter arrays in the fixed order W0, b0, W1, b1, ... (views, not copies)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self):
        return Mlp([W.copy() for W in self.weights], [b.copy() for b in self.biases],
                   self.activation)

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ShapeError(f"expected batch of shape (m, {self.d_in}), got {x.shape}")
        return x

    def forward(self, x):
        return self.forward_cached(x)[0]

    def forward_cached(self, x):
        x = self._check_input(x)
        act = ACTIVATIONS[self.activation][0]
        hs = [x]
        h = x
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < last:
                h = act(h)
            hs.append(h)
        return h, hs

    def backward(self, cache, upstream):
        """Reverse pass for the scalar ``sum(upstream * forward(x))``.

        Returns ``(param_grads, input_grads)``; ``param_grads`` follows :attr:`params`.
        """
        hs = cache
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != hs[-1].shape:
            raise ShapeError(f"upstream shape {upstream.shape} != output shape {hs[-1].shape}")
        dact = ACTIVATIONS[self.activation][1]
        grads = [None] * (2 * len(self.weights))
        g = upstream
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                g = g * dact(hs[i + 1])
            grads[2 * i] = hs[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grads, g


def mlp_forward(net, batch):
    return net.forward(batch)


def mlp_gradients(net, batch, upstream):
    """Gradients of ``<upstream, net(batch)>`` w.r.t. parameters and inputs."""
    out, cache = net.forward_cached(batch)
    return net.backward(cache, upstream)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state):
    """Bias-corrected Adam update, applied in place to ``params``."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameter arrays but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or m.shape != p.shape:
            raise ShapeError(f"parameter {p.shape} vs gradient {g.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def solve_ridge(G, b, lam=0.0):
    """Solve ``(G + lam I) c = b`` for symmetric ``G``.

    Cholesky first; if that fails or leaves a pivot below ``PIVOT_TOL``, LU with
    partial pivoting.  A pivot below tolerance after both raises
    :class:`SingularSystemError`.
    """
    G = np.asarray(G, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ShapeError(f"G must be square, got {G.shape}")
    if b.shape[0] != G.shape[0]:
        raise ShapeError(f"b has {b.shape[0]} rows, G is {G.shape}")
    if lam < 0:
        raise ValueError("ridge lam must be >= 0")
    if G.size and np.max(np.abs(G - G.T)) > SYMMETRY_TOL * max(1.0, np.max(np.abs(G))):
        raise ValueError("G is not symmetric")
    A = G + lam * np.eye(G.shape[0])
    try:
        factor = linalg.cho_factor(A, lower=True, check_finite=True)
        if np.min(np.diag(factor[0])) ** 2 >= PIVOT_TOL:
            return linalg.cho_solve(factor, b)
    except linalg.LinAlgError:
        pass
    with warnings.catch_warnings():
        # singularity is reported below through the pivot check
        warnings.simplefilter("ignore", linalg.LinAlgWarning)
        lu, piv = linalg.lu_factor(A, check_finite=True)
    if np.min(np.abs(np.diag(lu))) < PIVOT_TOL:
        hint = " ; use a ridge lam > 0" if lam == 0 else ""
        raise SingularSystemError(f"G + lam*I is numerically singular (lam={lam}){hint}")
    return linalg.lu_solve((lu, piv), b)


def solve_ridge_batched(G, b, lam=0.0):
    """Batched ``(G[i] + lam I) c[i] = b[i]``; ``G`` is ``(B, k, k)``, ``b`` is ``(B, k)``.

    Uses LAPACK LU on the whole stack at once.
    """
    G = np.asarray(G, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if G.ndim != 3 or G.shape[1] != G.shape[2] or b.shape != G.shape[:2]:
        raise ShapeError(f"expected G (B,k,k) and b (B,k), got {G.shape} and {b.shape}")
    A = G + lam * np.eye(G.shape[1])
    try:
        c = np.linalg.solve(A, b[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        hint = " ; use a ridge lam > 0" if lam == 0 else ""
        raise SingularSystemError(f"batched system is singular (lam={lam}){hint}") from exc
    if not np.all(np.isfinite(c)):
        raise SingularSystemError(f"batched solve produced non-finite coefficients (lam={lam})")
    return c
