"""Per-rating-class empirical spread distributions and diagnostics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_rank_matrix, check_spread_matrix

__all__ = [
    "ClassMarginal",
    "MarginalStats",
    "build_marginals",
    "ecdf",
    "quantile",
    "expected_class_spread",
    "marginal_stats",
    "anova_f",
    "series_correlation",
    "ClassMarginals",
]


@dataclass(frozen=True)
class ClassMarginal:
    """Empirical spread distribution of one rating class."""

    rank: int
    samples: np.ndarray

    def __post_init__(self):
        s = np.sort(np.asarray(self.samples, dtype=float).ravel())
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def n(self):
        return self.samples.size

    @property
    def empty(self):
        return self.samples.size == 0


@dataclass(frozen=True)
class MarginalStats:
    rank: int
    count: int
    mean: float
    st_dev: float
    skewness: float
    kurtosis: float


def build_marginals(ratings, spreads, n_states=None, min_samples=30):
    """Pool every ``(country, date)`` spread by the rating held at that date.

    Returns one ``ClassMarginal`` per rank ``1..D``; classes without data are
    empty, and classes below ``min_samples`` trigger a warning.
    """
    if n_states is None:
        n_states = getattr(ratings, "n_states", None) or int(np.max(getattr(ratings, "ranks", ratings)))
    r = check_rank_matrix(ratings, n_states)
    s = check_spread_matrix(spreads)
    if r.shape != s.shape:
        raise ValueError(f"rating panel {r.shape} and spread panel {s.shape} are not aligned")
    out = []
    for x in range(1, n_states + 1):
        m = ClassMarginal(x, s[r == x])
        if 0 < m.n < min_samples:
            warnings.warn(f"rating class {x} has only {m.n} spread samples", stacklevel=2)
        out.append(m)
    return out


def _require(marginal):
    if marginal.empty:
        raise ValueError(f"rating class {marginal.rank} has no spread samples")


def ecdf(marginal, y):
    """Right-continuous empirical CDF ``#{samples <= y} / n``."""
    _require(marginal)
    return np.searchsorted(marginal.samples, y, side="right") / marginal.n


def quantile(marginal, u):
    """Generalized inverse: the smallest sample ``x`` with ``ecdf(x) >= u``."""
    _require(marginal)
    u = np.asarray(u, dtype=float)
    if np.any((u < 0) | (u > 1)):
        raise ValueError("quantile levels must lie in [0, 1]")
    n = marginal.n
    # smallest k with k / n >= u, evaluated with the same division as ecdf
    k = np.ceil(u * n).astype(np.int64)
    k = np.where((k - 1) / n >= u, k - 1, k)
    out = marginal.samples[np.clip(k - 1, 0, n - 1)]
    return out if out.ndim else float(out)


def expected_class_spread(marginal):
    """Mean of the class distribution.

    For nonnegative samples this equals the integral of the empirical
    survival function over ``[0, inf)``.
    """
    _require(marginal)
    return float(marginal.samples.mean())


def marginal_stats(marginal):
    """Mean, sample standard deviation, skewness and (non-excess) kurtosis."""
    s = marginal.samples
    if s.size == 0:
        nan = float("nan")
        return MarginalStats(marginal.rank, 0, nan, nan, nan, nan)
    sd = float(s.std(ddof=1)) if s.size > 1 else 0.0
    if s.size > 2 and s.std() > 0:
        skew = float(stats.skew(s))
        kurt = float(stats.kurtosis(s, fisher=False))
    else:
        skew = kurt = float("nan")
    return MarginalStats(marginal.rank, int(s.size), float(s.mean()), sd, skew, kurt)


def anova_f(marginals):
    """One-way ANOVA F statistic across non-empty classes and its p-value.

    Returns ``(inf, 0.0)`` when all within-class variance is zero but class
    means differ, and ``(0.0, 1.0)`` when everything is constant.
    """
    groups = [np.asarray(getattr(m, "samples", m), dtype=float) for m in marginals]
    groups = [g for g in groups if g.size]
    g = len(groups)
    n = sum(x.size for x in groups)
    if g < 2 or n <= g:
        raise ValueError("ANOVA needs at least 2 non-empty groups and more samples than groups")
    grand = np.concatenate(groups).mean()
    ssb = sum(x.size * (x.mean() - grand) ** 2 for x in groups)
    ssw = sum(((x - x.mean()) ** 2).sum() for x in groups)
    msb = ssb / (g - 1)
    msw = ssw / (n - g)
    if msw == 0:
        return (math.inf, 0.0) if msb > 0 else (0.0, 1.0)
    F = msb / msw
    return float(F), float(stats.f.sf(F, g - 1, n - g))


def series_correlation(spreads):
    """Pearson correlation between country spread series.

    Zero-variance series get zero correlation with every other series (unit
    diagonal kept) and a warning.
    """
    s = check_spread_matrix(spreads)
    if s.shape[1] < 2:
        raise ValueError("correlation needs at least 2 dates")
    centered = s - s.mean(axis=1, keepdims=True)
    norms = np.sqrt((centered ** 2).sum(axis=1))
    flat = norms == 0
    if flat.any():
        names = getattr(spreads, "countries", None)
        which = [names[i] for i in np.flatnonzero(flat)] if names else np.flatnonzero(flat).tolist()
        warnings.warn(f"constant spread series {which}; correlation set to 0", stacklevel=2)
    safe = np.where(flat, 1.0, norms)
    C = (centered @ centered.T) / np.outer(safe, safe)
    C[flat, :] = 0.0
    C[:, flat] = 0.0
    C = np.clip((C + C.T) / 2, -1.0, 1.0)
    np.fill_diagonal(C, 1.0)
    return C


class ClassMarginals(BaseEstimator):
    """Estimator wrapper: fit class marginals from aligned rating/spread panels.

    ``fit(X, y)`` takes ranks ``X`` and spreads ``y`` of shape
    (n_countries, n_dates). ``transform`` maps a rank matrix to class means.
    """

    def __init__(self, n_states=8, min_samples=30):
        self.n_states = n_states
        self.min_samples = min_samples

    def fit(self, X, y):
        self.marginals_ = build_marginals(X, y, self.n_states, self.min_samples)
        self.means_ = np.array([m.samples.mean() if m.n else np.nan for m in self.marginals_])
        self.counts_ = np.array([m.n for m in self.marginals_])
        return self

    def transform(self, X):
        check_is_fitted(self, "marginals_")
        ranks = check_rank_matrix(X, self.n_states)
        return self.means_[ranks - 1]

    def stats(self):
        check_is_fitted(self, "marginals_")
        return [marginal_stats(m) for m in self.marginals_]

    def anova(self):
        check_is_fitted(self, "marginals_")
        return anova_f(self.marginals_)
