"""Seed handling and input validation shared by every module."""
from __future__ import annotations

import numbers
import zlib

import numpy as np

from .exceptions import ShapeError


def _label_key(label):
    if isinstance(label, numbers.Integral):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode("utf-8"))


def derive_rng(seed, *labels):
    """Counter-based (Philox) generator for the stream named by ``labels`` under ``seed``.

    Streams for different label tuples are independent, so adding a new consumer
    never shifts the numbers another consumer sees.  A ``Generator`` passed as
    ``seed`` is returned unchanged when no labels are given.
    """
    if isinstance(seed, np.random.Generator):
        if not labels:
            return seed
        seed = int(seed.integers(0, 2**63 - 1))
    if seed is None:
        ss = np.random.SeedSequence()
    else:
        ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_label_key(x) for x in labels))
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed, *labels):
    """Integer seed for a named sub-stream; convenient where an int must be stored."""
    return int(derive_rng(seed, *labels, "seed").integers(0, 2**63 - 1))


def check_samples(X, n_features=None, name="samples", min_rows=1):
    """Return ``X`` as a finite float64 ``(m, n)`` array."""
    if hasattr(X, "samples"):
        X = X.samples
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ShapeError(f"{name} must be 2-D (m, n), got shape {X.shape}")
    if X.shape[0] < min_rows:
        raise ValueError(f"{name} needs at least {min_rows} rows, got {X.shape[0]}")
    if n_features is not None and X.shape[1] != n_features:
        raise ShapeError(f"{name} has {X.shape[1]} columns, expected {n_features}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    return X


def time_column(t, m):
    """Broadcast a scalar or per-row time to a ``(m, 1)`` column."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        return np.full((m, 1), float(t))
    t = t.reshape(-1, 1)
    if t.shape[0] != m:
        raise ShapeError(f"time has {t.shape[0]} entries for {m} rows")
    return t
