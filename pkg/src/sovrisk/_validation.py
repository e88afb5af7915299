"""Input validation helpers shared by the estimators and functional API."""

from __future__ import annotations

import numbers

import numpy as np


def check_rank_matrix(ranks, n_states=None, *, name="ranks"):
    """Validate a (n_countries, n_dates) matrix of ordinal ranks 1..D.

    Accepts a ``RatingPanel`` or anything array-like. A 1-D input is treated
    as a single country.

    Returns
    -------
    ndarray of int64, shape (n_countries, n_dates)
    """
    ranks = getattr(ranks, "ranks", ranks)
    arr = np.asarray(ranks)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D (countries x dates), got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise ValueError(f"{name} must contain integer ranks")
    arr = arr.astype(np.int64)
    lo = arr.min()
    if lo < 1:
        raise ValueError(f"{name} contains rank {lo} < 1")
    if n_states is not None and arr.max() > n_states:
        raise ValueError(f"{name} contains rank {arr.max()} > n_states={n_states}")
    return arr


def check_spread_matrix(spreads, *, name="spreads", allow_negative=False):
    """Validate a finite (n_countries, n_dates) float matrix."""
    spreads = getattr(spreads, "spreads", spreads)
    arr = np.asarray(spreads, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D (countries x dates), got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if not allow_negative and np.any(arr < 0):
        raise ValueError(f"{name} contains negative values")
    return arr


def check_stochastic(P, *, atol=1e-10, name="P"):
    """Validate a square row-stochastic matrix and return it as float array."""
    P = getattr(P, "matrix", P)
    arr = np.asarray(P, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got shape {arr.shape}")
    if np.any(arr < -atol) or np.any(arr > 1 + atol):
        raise ValueError(f"{name} has entries outside [0, 1]")
    if not np.allclose(arr.sum(axis=1), 1.0, atol=atol, rtol=0):
        raise ValueError(f"{name} rows do not sum to 1")
    return arr


def check_random_state(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    raise ValueError(f"{seed!r} cannot be used to seed a numpy.random.Generator")


def stream(seed, index):
    """Independent RNG stream for replicate ``index`` under a top-level ``seed``.

    The stream depends only on ``(seed, index)``, so results reduced in index
    order do not depend on how the work was split between workers.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))
