"""Structural breaks in pooled rating dynamics.

Break positions maximize the segmented log-likelihood exactly by dynamic
programming over prefix count tables; the number of breaks is chosen by BIC,
and the likelihood-ratio statistic is calibrated by a parametric bootstrap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy import stats
from scipy.special import xlogy
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._parallel import ordered_map
from ._validation import check_rank_matrix, stream
from .markov import CountTensor, SegmentedChainModel, estimate_matrix, simulate_paths

__all__ = [
    "ChangePointFit",
    "LrtResult",
    "segment_loglik",
    "find_changepoints",
    "lrt_statistic",
    "bootstrap_lrt",
    "bootstrap_critical",
    "bic_score",
    "param_count",
    "model_select",
    "ChangePointDetector",
]

_TIE_TOL = 1e-9


@dataclass(frozen=True)
class LrtResult:
    lam: float
    critical_value: float
    p_value: float
    df: int
    replicates: tuple = field(default=(), repr=False)


@dataclass(frozen=True)
class ChangePointFit:
    k: int
    taus: tuple
    total_loglik: float
    param_count: int
    bic: float
    bic_by_k: dict = field(default_factory=dict)
    loglik_by_k: dict = field(default_factory=dict)
    params_by_k: dict = field(default_factory=dict)
    taus_by_k: dict = field(default_factory=dict)


def _loglik(counts):
    """Maximized multinomial log-likelihood of count matrices, vectorized over leading axes."""
    counts = np.asarray(counts, dtype=float)
    rows = counts.sum(axis=-1)
    return xlogy(counts, counts).sum(axis=(-2, -1)) - xlogy(rows, rows).sum(axis=-1)


def _table(panel, n_states=None):
    if isinstance(panel, CountTensor):
        return panel
    if n_states is None:
        n_states = getattr(panel, "n_states", None) or int(np.max(getattr(panel, "ranks", panel)))
    return CountTensor(check_rank_matrix(panel, n_states), n_states)


def segment_loglik(counts, a, b):
    """Log-likelihood of the MLE matrix fitted on transitions ``[a, b)``.

    ``sum_ij n_ij log(n_ij / n_i.)`` with empty cells contributing 0. An
    empty interval (``a == b``) has log-likelihood 0; ``a > b`` is an error.
    """
    if a > b:
        raise ValueError(f"reversed segment [{a}, {b})")
    table = _table(counts)
    return float(_loglik(table.interval(a, b)))


def _row_costs(table, a, lo, hi):
    """Segment log-likelihoods of ``[a, b)`` for ``b`` in ``lo..hi``."""
    diff = table.prefix[lo:hi + 1] - table.prefix[a]
    return _loglik(diff)


def _best_segmentation(table, k, min_seg):
    """Exact maximizer of the k-break segmented log-likelihood.

    Suffix recurrence: ``best[j][a]`` is the best log-likelihood of splitting
    transitions ``[a, n)`` into ``j`` segments. The forward pass then picks
    the earliest optimal break at each step, giving the lexicographically
    smallest optimal break vector.
    """
    n = table.n_transitions
    if k == 0:
        return (), float(_loglik(table.interval(0, n)))
    if min_seg < 1 or (k + 1) * min_seg > n:
        raise ValueError(f"{k} breaks with min_seg={min_seg} do not fit in {n} transitions")
    best = np.full((k + 2, n + 1), -np.inf)
    for a in range(n - min_seg, -1, -1):
        row = _row_costs(table, a, a + min_seg, n)  # b = a+min_seg .. n
        best[1, a] = row[-1]
        for j in range(2, k + 2):
            hi = n - (j - 1) * min_seg  # last admissible end of this segment
            if hi < a + min_seg:
                break
            cand = row[: hi - a - min_seg + 1] + best[j - 1, a + min_seg: hi + 1]
            best[j, a] = cand.max()
    taus = []
    a = 0
    for j in range(k + 1, 1, -1):
        hi = n - (j - 1) * min_seg
        row = _row_costs(table, a, a + min_seg, hi)
        cand = row + best[j - 1, a + min_seg: hi + 1]
        target = best[j, a]
        pick = int(np.flatnonzero(cand >= target - _TIE_TOL * max(1.0, abs(target)))[0])
        a = a + min_seg + pick
        taus.append(a)
    return tuple(taus), float(best[k + 1, 0])


def _total_loglik(table, taus):
    bounds = (0,) + tuple(taus) + (table.n_transitions,)
    return float(sum(_loglik(table.interval(a, b)) for a, b in zip(bounds, bounds[1:])))


def _refine(table, taus, radius, min_seg, sweeps=3):
    """Coordinate-wise local search of each break within ``radius`` steps."""
    taus = list(taus)
    n = table.n_transitions
    for _ in range(sweeps):
        moved = False
        for m in range(len(taus)):
            lo = max((taus[m - 1] if m else 0) + min_seg, taus[m] - radius)
            hi = min((taus[m + 1] if m + 1 < len(taus) else n) - min_seg, taus[m] + radius)
            best_t, best_v = taus[m], -np.inf
            for t in range(lo, hi + 1):
                v = _total_loglik(table, taus[:m] + [t] + taus[m + 1:])
                if v > best_v + _TIE_TOL * max(1.0, abs(v)):
                    best_t, best_v = t, v
            moved |= best_t != taus[m]
            taus[m] = best_t
        if not moved:
            break
    return tuple(taus)


def find_changepoints(panel, k, min_seg=None, *, n_states=None, two_stage=False, coarse_step=21):
    """Maximum-likelihood break positions for a fixed number of breaks.

    Parameters
    ----------
    panel : RatingPanel, array-like (n_countries, n_dates) or CountTensor
    k : int
        Number of breaks.
    min_seg : int, optional
        Minimum segment length in transitions; defaults to ``D**2``.
    two_stage : bool
        Search on a subsampled calendar (every ``coarse_step`` dates) first,
        then refine each break locally on the full calendar. Approximate;
        the default is the exact search.

    Returns
    -------
    tuple of int
        Break positions in transition indices.
    """
    table = _table(panel, n_states)
    if min_seg is None:
        min_seg = table.n_states ** 2
    if k < 0:
        raise ValueError("k must be >= 0")
    if not two_stage or k == 0:
        return _best_segmentation(table, k, min_seg)[0]
    if isinstance(panel, CountTensor):
        raise TypeError("two-stage search needs the rank panel, not a CountTensor")
    ranks = check_rank_matrix(panel, table.n_states)
    coarse = CountTensor(ranks[:, ::coarse_step], table.n_states)
    coarse_taus, _ = _best_segmentation(coarse, k, max(1, math.ceil(min_seg / coarse_step)))
    guess = []
    lo = min_seg
    for i, t in enumerate(coarse_taus):
        hi = table.n_transitions - (k - i) * min_seg
        guess.append(int(np.clip(t * coarse_step, lo, hi)))
        lo = guess[-1] + min_seg
    return _refine(table, guess, coarse_step, min_seg)


def lrt_statistic(panel, taus, *, n_states=None):
    """``2 * (segmented log-likelihood - pooled log-likelihood)``, never negative."""
    table = _table(panel, n_states)
    lam = 2.0 * (_total_loglik(table, taus) - _total_loglik(table, ()))
    return max(lam, 0.0)


def _bootstrap_replicate(r, *, P, initial, n_dates, k, min_seg, seed, n_states):
    rng = stream(seed, r)
    u = rng.random((n_dates - 1, initial.size))
    paths = simulate_paths(SegmentedChainModel.homogeneous(P), initial, u).T
    table = CountTensor(paths, n_states)
    taus, ll = _best_segmentation(table, k, min_seg)
    return max(2.0 * (ll - _total_loglik(table, ())), 0.0)


def bootstrap_lrt(panel, k, reps=199, seed=0, *, min_seg=None, n_states=None, n_jobs=None):
    """Null distribution of the search-maximized LRT statistic.

    Each replicate simulates a panel of the same size and initial ranks from
    the pooled MLE matrix, re-estimates ``k`` breaks and recomputes the
    statistic. Replicate ``r`` uses its own stream of ``seed``.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    table = _table(panel, n_states)
    if min_seg is None:
        min_seg = table.n_states ** 2
    P = estimate_matrix(table.interval())
    fn = partial(_bootstrap_replicate, P=P, initial=table.initial, n_dates=table.n_dates,
                 k=k, min_seg=min_seg, seed=seed, n_states=table.n_states)
    return np.array(ordered_map(fn, range(reps), n_jobs))


def nearest_rank(values, q):
    """Nearest-rank empirical quantile: the ``ceil(q * n)``-th order statistic."""
    values = np.sort(np.asarray(values, dtype=float))
    idx = max(1, math.ceil(round(q * values.size, 9)))
    return float(values[idx - 1])


def bootstrap_critical(panel, k, alpha=0.05, reps=199, seed=0, *, min_seg=None,
                       n_states=None, n_jobs=None):
    """Bootstrap ``(1 - alpha)`` critical value of the LRT statistic."""
    lam = bootstrap_lrt(panel, k, reps, seed, min_seg=min_seg, n_states=n_states, n_jobs=n_jobs)
    return nearest_rank(lam, 1.0 - alpha)


def lrt_test(panel, taus, alpha=0.05, reps=199, seed=0, *, min_seg=None, n_states=None,
             n_jobs=None):
    """Likelihood-ratio test of homogeneity against the given breaks."""
    table = _table(panel, n_states)
    lam = lrt_statistic(table, taus)
    boot = bootstrap_lrt(table, len(taus), reps, seed, min_seg=min_seg, n_jobs=n_jobs)
    D = table.n_states
    return LrtResult(
        lam=lam,
        critical_value=nearest_rank(boot, 1.0 - alpha),
        p_value=float((1 + np.sum(boot >= lam)) / (reps + 1)),
        df=D * (D - 1) * len(taus),
        replicates=tuple(boot.tolist()),
    )


def chi2_critical(df, alpha=0.05):
    return float(stats.chi2.ppf(1.0 - alpha, df))


def bic_score(loglik, param_count, s):
    """``log(s) * param_count - 2 * loglik`` (natural log)."""
    if s < 2:
        raise ValueError("sequence length s must be >= 2")
    return math.log(s) * param_count - 2.0 * loglik


def param_count(table, taus):
    """Number of positive off-diagonal transition probabilities, summed over segments."""
    bounds = (0,) + tuple(taus) + (table.n_transitions,)
    total = 0
    for a, b in zip(bounds, bounds[1:]):
        n = table.interval(a, b)
        total += int(np.count_nonzero(n[~np.eye(n.shape[0], dtype=bool)]))
    return total


def model_select(panel, K_max=3, min_seg=None, *, n_states=None, two_stage=False,
                 coarse_step=21):
    """Fit ``k = 0..K_max`` breaks and keep the BIC minimizer (ties go to smaller k)."""
    if K_max < 0:
        raise ValueError("K_max must be >= 0")
    table = _table(panel, n_states)
    if min_seg is None:
        min_seg = table.n_states ** 2
    s = table.n_dates
    fits = {}
    for k in range(K_max + 1):
        if (k + 1) * min_seg > table.n_transitions:
            break
        if two_stage and k:
            taus = find_changepoints(panel, k, min_seg, n_states=table.n_states,
                                     two_stage=True, coarse_step=coarse_step)
            ll = _total_loglik(table, taus)
        else:
            taus, ll = _best_segmentation(table, k, min_seg)
        g = param_count(table, taus)
        fits[k] = (taus, ll, g, bic_score(ll, g, s))
    best = min(fits, key=lambda k: (fits[k][3], k))
    taus, ll, g, bic = fits[best]
    return ChangePointFit(
        k=best, taus=taus, total_loglik=ll, param_count=g, bic=bic,
        bic_by_k={k: f[3] for k, f in fits.items()},
        loglik_by_k={k: f[1] for k, f in fits.items()},
        params_by_k={k: f[2] for k, f in fits.items()},
        taus_by_k={k: f[0] for k, f in fits.items()},
    )


class ChangePointDetector(BaseEstimator):
    """BIC-selected breaks in a pooled rating panel, with a bootstrap LRT.

    Parameters
    ----------
    n_states : int
    max_breaks : int
        Largest number of breaks tried (``K_max``).
    min_seg : int, optional
        Minimum segment length in transitions; ``None`` means ``n_states**2``.
    alpha : float
        Test level for the bootstrap critical value.
    n_bootstrap : int
        Bootstrap replicates; 0 skips the test.
    random_state : int
    n_jobs : int, optional
        Worker processes for the bootstrap. Does not change results.
    two_stage : bool
        Use the coarse-then-fine approximate search.
    coarse_step : int

    Attributes
    ----------
    fit_ : ChangePointFit
    n_breaks_, taus_ : selected model
    test_ : LrtResult or None
        Test of the selected breaks, or of the best single break when no
        break is selected.
    chain_ : SegmentedChainModel
        Transition matrices per selected segment.
    """

    def __init__(self, n_states=8, max_breaks=3, min_seg=None, alpha=0.05, n_bootstrap=199,
                 random_state=0, n_jobs=None, two_stage=False, coarse_step=21):
        self.n_states = n_states
        self.max_breaks = max_breaks
        self.min_seg = min_seg
        self.alpha = alpha
        self.n_bootstrap = n_bootstrap
        self.random_state = random_state
        self.n_jobs = n_jobs
        self.two_stage = two_stage
        self.coarse_step = coarse_step

    def fit(self, X, y=None):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        ranks = check_rank_matrix(X, self.n_states)
        table = CountTensor(ranks, self.n_states)
        min_seg = self.min_seg or self.n_states ** 2
        fit = model_select(ranks, self.max_breaks, min_seg, n_states=self.n_states,
                           two_stage=self.two_stage, coarse_step=self.coarse_step)
        self.fit_ = fit
        self.n_breaks_ = fit.k
        self.taus_ = fit.taus
        test_taus = fit.taus if fit.k else fit.taus_by_k.get(1)
        self.test_ = None
        if self.n_bootstrap and test_taus:
            self.test_ = lrt_test(table, test_taus, self.alpha, self.n_bootstrap,
                                  self.random_state, min_seg=min_seg, n_jobs=self.n_jobs)
        bounds = (0,) + fit.taus + (table.n_transitions,)
        mats = [estimate_matrix(table.interval(a, b)) for a, b in zip(bounds, bounds[1:])]
        dates = getattr(X, "dates", None)
        break_dates = tuple(dates[t] for t in fit.taus) if dates is not None else ()
        self.chain_ = SegmentedChainModel(fit.taus, mats, break_dates)
        return self

    def transform(self, X):
        """Segment label of every transition of ``X``'s calendar."""
        check_is_fitted(self, "taus_")
        ranks = check_rank_matrix(X, self.n_states)
        t = np.arange(ranks.shape[1] - 1)
        return np.searchsorted(self.taus_, t, side="right")
