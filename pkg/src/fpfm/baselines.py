"""Comparison methods: a pooled unconditional field, a code-conditioned field,
classifier guidance, noise-space distribution guidance and per-target finetuning."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import conditioning_code
from .exceptions import DivergenceError
from .flow import IntegratorConfig, NetField, VelocityField, integrate, integrate_backward
from .nn import AdamState, Mlp, adam_step, mlp_gradients
from .utils import check_samples, derive_rng


@dataclass
class FlowConfig:
    """Optimisation settings shared by the plain flow-matching baselines."""

    gradient_steps: int = 3000
    batch_size: int = 512
    lr: float = 1e-3
    hidden: tuple = (64, 64, 64)
    activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        if self.gradient_steps < 0:
            raise ValueError("gradient_steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        self.hidden = tuple(int(h) for h in self.hidden)


@dataclass(frozen=True)
class GuidanceConfig:
    alpha: float = 5.0

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError(f"guidance strength must be >= 0, got {self.alpha}")


@dataclass
class TrainedField:
    """A learned field with its loss curve."""

    field: VelocityField
    loss_history: list = field(default_factory=list)

    def __call__(self, x, t):
        return self.field(x, t)


def _pool(datasets, codes=None):
    data = [check_samples(d, name="dataset") for d in datasets]
    if not data:
        raise ValueError("need at least one dataset")
    n = data[0].shape[1]
    for d in data:
        check_samples(d, n, name="dataset")
    x1 = np.vstack(data)
    if codes is None:
        return x1, None
    c = np.concatenate([np.full(len(d), float(code)) for d, code in zip(data, codes)])
    return x1, c[:, None]


def _fit_flow(net, x1_pool, cond, cfg, rng, steps=None, lr=None, label="flow"):
    """Plain flow-matching regression of ``net([xt, t, cond])`` onto ``x1 - x0``.

    Rows are resampled from the pool with replacement each step; the loss is the
    mean squared velocity error over batch entries.
    """
    steps = cfg.gradient_steps if steps is None else steps
    opt = AdamState(lr=cfg.lr if lr is None else lr)
    history = []
    m, n = x1_pool.shape
    for step in range(steps):
        idx = rng.integers(0, m, size=cfg.batch_size)
        x1 = x1_pool[idx]
        x0 = rng.standard_normal(x1.shape)
        t = rng.uniform(size=(cfg.batch_size, 1))
        cols = [(1.0 - t) * x0 + t * x1, t]
        if cond is not None:
            cols.append(cond[idx])
        out, cache = net.forward_cached(np.hstack(cols))
        r = out - (x1 - x0)
        loss = float(np.mean(r * r))
        if not np.isfinite(loss):
            raise DivergenceError(f"{label}: non-finite loss at step {step}", step=step)
        grads = net.backward(cache, 2.0 * r / r.size)[0]
        adam_step(net.params, grads, opt)
        history.append(loss)
    return history


def flow_matching_loss(net, x1, cond=None, seed=0, m=4096):
    """Monte-Carlo flow-matching loss of ``net`` on fresh pairs from ``x1``."""
    rng = derive_rng(seed, "fm-loss")
    x1 = check_samples(x1)
    x1 = x1[rng.integers(0, len(x1), size=m)]
    x0 = rng.standard_normal(x1.shape)
    t = rng.uniform(size=(m, 1))
    cols = [(1.0 - t) * x0 + t * x1, t]
    if cond is not None:
        cols.append(np.full((m, 1), float(cond)))
    r = net.forward(np.hstack(cols)) - (x1 - x0)
    return float(np.mean(r * r))


def _new_net(n, extra, cfg, label):
    return Mlp.init([n + 1 + extra, *cfg.hidden, n], derive_rng(cfg.seed, "init", label),
                    cfg.activation)


def train_unconditional(datasets, cfg=FlowConfig()):
    """One field trained on all distributions pooled as if they were one."""
    x1, _ = _pool(datasets)
    net = _new_net(x1.shape[1], 0, cfg, "unconditional")
    hist = _fit_flow(net, x1, None, cfg, derive_rng(cfg.seed, "train", "unconditional"),
                     label="unconditional")
    return TrainedField(NetField(net, tag="unconditional"), hist)


class ConditionalFlow:
    """Field with input ``(x, t, code)``; :meth:`field` binds a code."""

    def __init__(self, net, loss_history):
        self.net = net
        self.loss_history = loss_history

    def field(self, code):
        code = float(code)
        if not np.isfinite(code):
            raise ValueError("conditioning code must be finite")
        return NetField(self.net, extra=[code], tag="conditional")

    def field_for(self, spec):
        return self.field(conditioning_code(spec))


def train_conditional(datasets, codes, cfg=FlowConfig()):
    if codes is None or len(codes) != len(datasets):
        raise ValueError("train_conditional needs exactly one code per dataset")
    codes = [float(c) for c in codes]
    if not np.all(np.isfinite(codes)):
        raise ValueError("conditioning codes must be finite")
    x1, cond = _pool(datasets, codes)
    net = _new_net(x1.shape[1], 1, cfg, "conditional")
    hist = _fit_flow(net, x1, cond, cfg, derive_rng(cfg.seed, "train", "conditional"),
                     label="conditional")
    return ConditionalFlow(net, hist)


@dataclass
class Classifier:
    """Logit network on ``[x, t]``."""

    net: Mlp
    loss_history: list = field(default_factory=list)

    def logits(self, x, t):
        return self.net.forward(_xt_inputs(x, t))[:, 0]

    def log_prob(self, x, t):
        """Stable ``log sigmoid(logit)``."""
        return -np.logaddexp(0.0, -self.logits(x, t))

    def grad_log_prob(self, x, t):
        """Input gradient of :meth:`log_prob` with respect to ``x``."""
        X = _xt_inputs(x, t)
        z = self.net.forward(X)
        # d/dz log sigmoid(z) = sigmoid(-z)
        upstream = 0.5 * (1.0 - np.tanh(0.5 * z))
        _, gin = mlp_gradients(self.net, X, upstream)
        return gin[:, :x.shape[1]]

    def accuracy(self, x, t, labels):
        return float(np.mean((self.logits(x, t) > 0) == (np.asarray(labels) > 0.5)))


def _xt_inputs(x, t):
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    tc = np.full((x.shape[0], 1), float(t)) if t.ndim == 0 else t.reshape(-1, 1)
    return np.hstack([x, tc])


def _path_states(x1_pool, m, rng):
    x1 = x1_pool[rng.integers(0, len(x1_pool), size=m)]
    x0 = rng.standard_normal(x1.shape)
    t = rng.uniform(size=(m, 1))
    return (1.0 - t) * x0 + t * x1, t


def train_classifier(target, negatives, cfg=FlowConfig()):
    """Binary cross-entropy between path states of ``target`` (label 1) and of the
    pooled ``negatives`` (label 0); half of each batch comes from each side."""
    pos = check_samples(target, name="positives")
    if not negatives:
        raise ValueError("train_classifier needs at least one negative dataset")
    neg, _ = _pool(negatives)
    n = pos.shape[1]
    if neg.shape[1] != n:
        raise ValueError("positives and negatives differ in dimension")
    net = Mlp.init([n + 1, *cfg.hidden, 1], derive_rng(cfg.seed, "init", "classifier"),
                   cfg.activation)
    rng = derive_rng(cfg.seed, "train", "classifier")
    opt = AdamState(lr=cfg.lr)
    half = max(1, cfg.batch_size // 2)
    y = np.concatenate([np.ones(half), np.zeros(half)])[:, None]
    hist = []
    for step in range(cfg.gradient_steps):
        xp, tp = _path_states(pos, half, rng)
        xn, tn = _path_states(neg, half, rng)
        X = np.hstack([np.vstack([xp, xn]), np.vstack([tp, tn])])
        z, cache = net.forward_cached(X)
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
        if not np.isfinite(loss):
            raise DivergenceError(f"classifier: non-finite loss at step {step}", step=step)
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        grads = net.backward(cache, (p - y) / len(y))[0]
        adam_step(net.params, grads, opt)
        hist.append(loss)
    return Classifier(net, hist)


class ClassifierGuidedField(VelocityField):
    """``v(x, t) = base(x, t) + alpha * grad_x log sigmoid(logit(x, t))``."""

    tag = "classifier_guided"

    def __init__(self, base, clf, gcfg=GuidanceConfig()):
        self.base = base
        self.clf = clf
        self.alpha = float(gcfg.alpha)

    def evaluate(self, x, t):
        out = self.base(x, t)
        if self.alpha == 0.0:
            return out
        return out + self.alpha * self.clf.grad_log_prob(x, t)


def classifier_guided_field(base, clf, gcfg=GuidanceConfig()):
    return ClassifierGuidedField(base, clf, gcfg)


class ComposedSampler:
    """Integrate the secondary noise-space field, then the pretrained field."""

    tag = "distribution_guided"

    def __init__(self, secondary, base, loss_history=None, labels=None):
        self.secondary = secondary
        self.base = base
        self.loss_history = loss_history or []
        self.labels = labels

    def sample(self, x0, cfg=IntegratorConfig()):
        z = x0 if self.secondary is None else integrate(self.secondary, x0, cfg)
        return integrate(self.base, z, cfg)

    __call__ = sample


def train_distribution_guided(base, target, cfg=FlowConfig(), backward_steps=1000):
    """Find noise inputs that ``base`` maps onto the target samples by integrating
    backwards, then learn a flow from fresh noise to those inputs."""
    x1 = check_samples(target, name="target")
    labels = integrate_backward(base, x1, IntegratorConfig(steps=backward_steps))
    net = _new_net(x1.shape[1], 0, cfg, "distribution-guided")
    hist = _fit_flow(net, labels, None, cfg,
                     derive_rng(cfg.seed, "train", "distribution-guided"),
                     label="distribution-guided")
    return ComposedSampler(NetField(net, tag="secondary"), base, hist, labels)


def finetune(base, target, cfg=FlowConfig(), steps=1000, lr=1e-3):
    """Copy of ``base`` (a :class:`NetField` or :class:`TrainedField`) trained further
    on ``target`` alone."""
    src = base.field if isinstance(base, TrainedField) else base
    if not isinstance(src, NetField):
        raise TypeError("finetune needs a network-backed field")
    x1 = check_samples(target, src.net.d_out, name="target")
    net = src.net.copy()
    cond = None
    if src.extra.size:
        cond = np.broadcast_to(src.extra, (len(x1), src.extra.size))
    hist = _fit_flow(net, x1, cond, cfg, derive_rng(cfg.seed, "train", "finetune"),
                     steps=steps, lr=lr, label="finetune")
    return TrainedField(NetField(net, extra=src.extra if src.extra.size else (),
                                 tag="finetune"), hist)


