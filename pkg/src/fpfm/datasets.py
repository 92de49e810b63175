"""The 2D Arcs family: quarter arcs of the unit circle (TD), two-arc mixtures (UD)
and a spiral (US)."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .utils import check_samples, derive_rng

QUARTER = math.pi / 2


@dataclass(frozen=True)
class ArcSpec:
    center: float
    width: float = QUARTER

    def __post_init__(self):
        if not math.isclose(self.width, QUARTER):
            raise ValueError("arcs span a quarter circle")

    def contains_angle(self, theta, tol=1e-12):
        d = np.angle(np.exp(1j * (np.asarray(theta) - self.center)))
        return np.abs(d) <= self.width / 2 + tol


@dataclass(frozen=True)
class MixtureSpec:
    components: tuple
    weights: tuple = (0.5, 0.5)

    def __post_init__(self):
        if len(self.components) != 2 or len(self.weights) != 2:
            raise ValueError("a mixture has exactly two arc components")
        if not math.isclose(sum(self.weights), 1.0):
            raise ValueError("mixture weights must sum to 1")


@dataclass(frozen=True)
class SpiralSpec:
    """Archimedean spiral ``r = theta / (2 pi turns)`` for ``theta`` in ``[0, 2 pi turns]``."""

    turns: int = 1

    def radius(self, theta):
        return np.asarray(theta) / (2 * math.pi * self.turns)


@dataclass
class Dataset:
    samples: np.ndarray
    split: str = "TD"
    spec: object = field(default=None)

    def __post_init__(self):
        self.samples = check_samples(self.samples)
        if self.split not in ("TD", "UD", "US"):
            raise ValueError(f"unknown split {self.split!r}")

    def __len__(self):
        return self.samples.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.samples if dtype is None else self.samples.astype(dtype)


def _arc_angles(spec, m, rng):
    return rng.uniform(spec.center - spec.width / 2, spec.center + spec.width / 2, size=m)


def _on_circle(theta):
    return np.column_stack([np.cos(theta), np.sin(theta)])


def sample_arc(spec, m, seed=None, split="TD"):
    if m < 1:
        raise ValueError("m must be >= 1")
    return Dataset(_on_circle(_arc_angles(spec, m, derive_rng(seed))), split, spec)


def mixture_angles(spec, m, rng):
    """Angles and the component index each was drawn from."""
    comp = (rng.uniform(size=m) >= spec.weights[0]).astype(int)
    theta = np.empty(m)
    for j, arc in enumerate(spec.components):
        sel = comp == j
        theta[sel] = _arc_angles(arc, int(sel.sum()), rng)
    return theta, comp


def sample_mixture(spec, m, seed=None, split="UD"):
    if m < 1:
        raise ValueError("m must be >= 1")
    theta, _ = mixture_angles(spec, m, derive_rng(seed))
    return Dataset(_on_circle(theta), split, spec)


def sample_spiral(spec, m, seed=None, split="US"):
    if m < 1:
        raise ValueError("m must be >= 1")
    theta = derive_rng(seed).uniform(0.0, 2 * math.pi * spec.turns, size=m)
    return Dataset(spiral_points(spec, theta), split, spec)


def spiral_points(spec, theta):
    r = spec.radius(theta)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def sample(spec, m, seed=None):
    """Dispatch on the spec type."""
    if isinstance(spec, ArcSpec):
        return sample_arc(spec, m, seed)
    if isinstance(spec, MixtureSpec):
        return sample_mixture(spec, m, seed)
    if isinstance(spec, SpiralSpec):
        return sample_spiral(spec, m, seed)
    raise TypeError(f"cannot sample from {type(spec).__name__}")


@dataclass(frozen=True)
class Splits:
    train: list
    unseen: list
    support: SpiralSpec

    def __iter__(self):
        return iter((self.train, self.unseen, self.support))


def make_splits(n_train_arcs=8, seed=None, n_mixtures=None):
    """TD arcs evenly spaced on ``[0, 2 pi)``, UD mixtures of random distinct TD pairs,
    US a one-turn spiral."""
    if n_train_arcs < 2:
        raise ValueError("need at least two training arcs")
    td = [ArcSpec(2 * math.pi * i / n_train_arcs) for i in range(n_train_arcs)]
    rng = derive_rng(seed, "splits")
    ud = []
    for _ in range(n_train_arcs if n_mixtures is None else n_mixtures):
        i, j = rng.choice(n_train_arcs, size=2, replace=False)
        ud.append(MixtureSpec((td[i], td[j])))
    return Splits(td, ud, SpiralSpec())


def conditioning_code(spec):
    """Scalar condition for the Conditional baseline: arc centre, circular mean of a
    mixture's centres, 0 for the spiral."""
    if isinstance(spec, ArcSpec):
        return float(spec.center)
    if isinstance(spec, MixtureSpec):
        z = sum(w * np.exp(1j * c.center) for w, c in zip(spec.weights, spec.components))
        return float(np.angle(z) % (2 * math.pi))
    return 0.0


def write_csv(path, samples):
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 2) if np.size(samples) == 0 \
        else check_samples(samples)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{i}" for i in range(samples.shape[1])])
        for row in samples:
            writer.writerow([format(v, ".17g") for v in row])


def read_csv(path, split="TD"):
    """Read a sample CSV; returns a :class:`Dataset`, or an empty ``(0, n)`` array if
    the file holds a header only."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, body = rows[0], [r for r in rows[1:] if r]
    if not all(h == f"x{i}" for i, h in enumerate(header)):
        raise ValueError(f"{path}: unexpected header {header}")
    try:
        data = np.array([[float(v) for v in r] for r in body], dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from exc
    if not body:
        return np.zeros((0, len(header)))
    if data.shape[1] != len(header):
        raise ValueError(f"{path}: ragged rows")
    return Dataset(data, split)
