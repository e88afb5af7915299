"""Piecewise-homogeneous Markov chains on an ordinal rating scale.

Time convention: with ``T`` dates there are ``T - 1`` transitions; transition
``t`` goes from date ``t`` to date ``t + 1``. A break at ``tau`` means
transitions ``t >= tau`` use the next matrix, so segment ``l`` covers
transitions ``[tau_l, tau_{l+1})``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_rank_matrix, check_stochastic

__all__ = [
    "TransitionMatrix",
    "SegmentedChainModel",
    "CountTensor",
    "count_transitions",
    "estimate_matrix",
    "matrix_power",
    "piecewise_propagate",
    "propagation_path",
    "cumulative_rows",
    "step_ranks",
    "simulate_paths",
    "mobility_metric",
    "js_distance",
    "PiecewiseMarkovChain",
]

_ROW_DRIFT = 1e-12


def _renormalize(M):
    s = M.sum(axis=1, keepdims=True)
    if np.any(np.abs(s - 1.0) > _ROW_DRIFT):
        M = M / s
    return M


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic D x D matrix valid on transitions ``[start, end)``.

    ``end=None`` means the matrix applies indefinitely.
    """

    matrix: np.ndarray
    start: int = 0
    end: int | None = None

    def __post_init__(self):
        P = check_stochastic(self.matrix, atol=1e-12)
        P = np.clip(P, 0.0, 1.0)
        P.setflags(write=False)
        object.__setattr__(self, "matrix", P)

    @property
    def D(self):
        return self.matrix.shape[0]

    def to_csv(self):
        return "\n".join(",".join(f"{v:.17g}" for v in row) for row in self.matrix) + "\n"

    @classmethod
    def from_csv(cls, text, start=0, end=None):
        rows = [list(map(float, line.split(","))) for line in text.strip().splitlines()]
        return cls(np.array(rows), start, end)


@dataclass(frozen=True)
class SegmentedChainModel:
    """Breaks ``taus`` (strictly increasing, implicit ``tau_0 = 0``) and one matrix per segment."""

    taus: tuple
    matrices: tuple
    break_dates: tuple = field(default=())

    def __post_init__(self):
        taus = tuple(int(t) for t in self.taus)
        mats = tuple(m if isinstance(m, TransitionMatrix) else TransitionMatrix(m) for m in self.matrices)
        if not mats:
            raise ValueError("a chain needs at least one transition matrix")
        if len(mats) != len(taus) + 1:
            raise ValueError(f"{len(taus)} breaks need {len(taus) + 1} matrices, got {len(mats)}")
        if any(t <= 0 for t in taus) or any(b <= a for a, b in zip(taus, taus[1:])):
            raise ValueError(f"breaks must be positive and strictly increasing, got {taus}")
        if len({m.D for m in mats}) != 1:
            raise ValueError("all segment matrices must have the same dimension")
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "matrices", mats)
        object.__setattr__(self, "break_dates", tuple(self.break_dates))

    @classmethod
    def homogeneous(cls, P):
        return cls((), (P,))

    @property
    def k(self):
        return len(self.taus)

    @property
    def D(self):
        return self.matrices[0].D

    def segment_of(self, t):
        """Index of the segment whose matrix drives transition ``t``."""
        return int(np.searchsorted(self.taus, t, side="right"))

    def matrix_at(self, t):
        return self.matrices[self.segment_of(t)].matrix

    def last_segment(self):
        """Homogeneous chain made of the final segment's matrix."""
        return SegmentedChainModel((), (self.matrices[-1].matrix,))

    def sidecar(self):
        return {
            "k": self.k,
            "tau_indices": list(self.taus),
            "tau_dates": [str(d) for d in self.break_dates],
            "segments": [[int(a), None if b is None else int(b)]
                         for a, b in zip((0,) + self.taus, self.taus + (None,))],
        }

    def to_json(self):
        return json.dumps(self.sidecar(), indent=2)


class CountTensor:
    """Pooled transition counts with prefix tables for O(D^2) interval queries.

    ``prefix[t]`` holds the counts of transitions ``0..t-1``, so the counts of
    ``[a, b)`` are ``prefix[b] - prefix[a]``.
    """

    def __init__(self, ranks, n_states):
        ranks = check_rank_matrix(ranks, n_states)
        self.n_states = int(n_states)
        self.n_countries, self.n_dates = ranks.shape
        n = self.n_transitions
        D = self.n_states
        per_step = np.zeros((n, D * D), dtype=np.int64)
        if n:
            flat = (ranks[:, :-1] - 1) * D + (ranks[:, 1:] - 1)
            steps = np.broadcast_to(np.arange(n), flat.shape)
            np.add.at(per_step, (steps.ravel(), flat.ravel()), 1)
        prefix = np.zeros((n + 1, D, D), dtype=np.int64)
        np.cumsum(per_step.reshape(n, D, D), axis=0, out=prefix[1:])
        prefix.setflags(write=False)
        self.prefix = prefix
        self.initial = ranks[:, 0].copy()

    @property
    def n_transitions(self):
        return max(self.n_dates - 1, 0)

    def interval(self, a=0, b=None):
        """Counts ``n_ij`` over transitions ``[a, b)``; empty intervals give zeros."""
        n = self.n_transitions
        b = n if b is None else b
        if not (0 <= a <= n and 0 <= b <= n):
            raise ValueError(f"interval [{a}, {b}) outside [0, {n}]")
        if b <= a:
            return np.zeros((self.n_states, self.n_states), dtype=np.int64)
        return self.prefix[b] - self.prefix[a]


def count_transitions(panel, interval=None, n_states=None):
    """Pooled transition counts of a rating panel over a transition interval.

    Parameters
    ----------
    panel : RatingPanel or array-like (n_countries, n_dates)
    interval : (a, b), optional
        Transition indices ``[a, b)``; defaults to all transitions.
    n_states : int, optional
        Defaults to ``panel.n_states`` or the largest rank observed.
    """
    if n_states is None:
        n_states = getattr(panel, "n_states", None) or int(np.max(getattr(panel, "ranks", panel)))
    counts = CountTensor(panel, n_states)
    if interval is None:
        return counts.interval()
    return counts.interval(*interval)


def estimate_matrix(counts):
    """Row-wise maximum-likelihood transition matrix ``n_ij / sum_j n_ij``.

    States never left from (zero row) get an identity row.
    """
    n = np.asarray(counts, dtype=float)
    totals = n.sum(axis=1, keepdims=True)
    P = np.divide(n, totals, out=np.zeros_like(n), where=totals > 0)
    empty = totals[:, 0] == 0
    P[empty, empty.nonzero()[0]] = 1.0
    return P


def matrix_power(P, n):
    """``P**n`` by repeated squaring, renormalizing rows if they drift."""
    n = int(n)
    if n < 0:
        raise ValueError("matrix power needs n >= 0")
    P = np.asarray(getattr(P, "matrix", P), dtype=float)
    result = np.eye(P.shape[0])
    base = P.copy()
    while n:
        if n & 1:
            result = _renormalize(result @ base)
        n >>= 1
        if n:
            base = _renormalize(base @ base)
    return result


def _propagator(model, t):
    """Full D x D transition matrix from date 0 to date ``t``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    D = model.D
    M = np.eye(D)
    start = 0
    for seg, mat in enumerate(model.matrices):
        end = model.taus[seg] if seg < model.k else None
        stop = t if end is None else min(t, end)
        if stop > start:
            M = _renormalize(M @ matrix_power(mat.matrix, stop - start))
        if end is None or t <= end:
            break
        start = end
    return M


def piecewise_propagate(model, i, t):
    """Distribution of the rank at date ``t`` given rank ``i`` (1-based) at date 0."""
    if not 1 <= i <= model.D:
        raise ValueError(f"rank {i} outside 1..{model.D}")
    return _propagator(model, t)[i - 1]


def propagation_path(model, horizon):
    """Stack of propagators ``P^{(t)}`` for ``t = 0..horizon``, shape (horizon+1, D, D).

    Built step by step, so one call covers every date of a recursion.
    """
    D = model.D
    out = np.empty((horizon + 1, D, D))
    M = np.eye(D)
    out[0] = M
    for t in range(horizon):
        M = _renormalize(M @ model.matrix_at(t))
        out[t + 1] = M
    return out


def cumulative_rows(P):
    """Row-wise CDFs with the last column pinned to exactly 1."""
    cum = np.cumsum(np.asarray(P, dtype=float), axis=1)
    cum[:, -1] = 1.0
    return cum


def step_ranks(current, cum, u):
    """Inverse-CDF step: next rank ``k`` with ``cum[i, k-1] <= u < cum[i, k]``.

    ``current`` holds 1-based ranks of any shape, ``u`` uniforms of the same
    shape; returns 1-based ranks.
    """
    rows = cum[current - 1]
    return (rows <= u[..., None]).sum(axis=-1) + 1


def simulate_paths(model, initial, uniforms):
    """Rank paths driven by pre-drawn uniforms.

    Parameters
    ----------
    model : SegmentedChainModel
    initial : array of int, shape (...,)
        Ranks at date 0.
    uniforms : ndarray, shape (n_steps, ...)
        ``uniforms[t]`` drives transition ``t``.

    Returns
    -------
    ndarray of int, shape (n_steps + 1, ...)
    """
    initial = np.asarray(initial, dtype=np.int64)
    n_steps = uniforms.shape[0]
    paths = np.empty((n_steps + 1,) + initial.shape, dtype=np.int64)
    paths[0] = initial
    cums = [cumulative_rows(m.matrix) for m in model.matrices]
    for t in range(n_steps):
        paths[t + 1] = step_ranks(paths[t], cums[model.segment_of(t)], uniforms[t])
    return paths


def mobility_metric(P):
    """Jafry-Schuermann mobility: mean singular value of ``P - I``."""
    P = np.asarray(getattr(P, "matrix", P), dtype=float)
    s = np.linalg.svd(P - np.eye(P.shape[0]), compute_uv=False)
    return float(s.sum() / P.shape[0])


def js_distance(P1, P2):
    """Difference of mobility metrics, ``M(P1) - M(P2)``."""
    A = np.asarray(getattr(P1, "matrix", P1))
    B = np.asarray(getattr(P2, "matrix", P2))
    if A.shape != B.shape:
        raise ValueError(f"dimension mismatch: {A.shape} vs {B.shape}")
    return mobility_metric(A) - mobility_metric(B)


class PiecewiseMarkovChain(BaseEstimator):
    """Fit one transition matrix per segment of a pooled rating panel.

    Parameters
    ----------
    n_states : int
        Number of rating classes ``D``.
    taus : sequence of int, optional
        Break positions in transition indices. ``None`` fits a homogeneous chain.

    Attributes
    ----------
    model_ : SegmentedChainModel
    counts_ : list of ndarray
        Per-segment count matrices.
    """

    def __init__(self, n_states=8, taus=None):
        self.n_states = n_states
        self.taus = taus

    def fit(self, X, y=None):
        ranks = check_rank_matrix(X, self.n_states)
        table = CountTensor(ranks, self.n_states)
        taus = tuple(self.taus or ())
        bounds = (0,) + taus + (table.n_transitions,)
        self.counts_ = [table.interval(a, b) for a, b in zip(bounds, bounds[1:])]
        mats = [TransitionMatrix(estimate_matrix(c), a, b)
                for c, a, b in zip(self.counts_, bounds, bounds[1:])]
        dates = getattr(X, "dates", None)
        break_dates = tuple(dates[t] for t in taus) if dates is not None else ()
        self.model_ = SegmentedChainModel(taus, mats, break_dates)
        return self

    def predict_proba(self, initial, t):
        """Rank distribution at date ``t`` for each initial rank in ``initial``."""
        check_is_fitted(self, "model_")
        M = _propagator(self.model_, t)
        return M[np.asarray(initial, dtype=int) - 1]

    def mobility(self):
        check_is_fitted(self, "model_")
        return [mobility_metric(m) for m in self.model_.matrices]
