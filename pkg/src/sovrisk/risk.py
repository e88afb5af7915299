"""Deterministic risk measures.

Theil inequality of spread shares with its between/within rating-class
decomposition, and the reward recursions for the expected cumulative spread
of a country (and the expected product of two countries' cumulative
spreads) under a piecewise Markov rating chain.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .markov import SegmentedChainModel, piecewise_propagate, propagation_path

__all__ = [
    "TheilDecomposition",
    "RewardModel",
    "shares_from_spreads",
    "theil_index",
    "theil_decompose",
    "theil_rows",
    "decompose_rows",
    "total_spread_path",
    "expected_total_spread_by_rank",
    "expected_total_spread",
    "expected_total_spread_path",
    "product_moment_path",
    "product_moment",
    "total_spread_covariance",
    "expected_theil_exact",
]


@dataclass(frozen=True)
class TheilDecomposition:
    total: float
    inter: float
    intra: float
    q: np.ndarray  # spread share of each class
    within: np.ndarray  # Theil index inside each class (0 for empty classes)


def shares_from_spreads(spreads):
    """Each country's share of the total spread."""
    s = np.asarray(spreads, dtype=float)
    if np.any(s < 0):
        raise ValueError("spreads must be nonnegative")
    total = math.fsum(s)  # exactly rounded, so independent of order
    if not total > 0:
        raise ValueError("all-zero spread vector: shares are undefined")
    return s / total


def theil_index(shares):
    """``sum_i p_i log(N p_i)``, with ``0 log 0 = 0``. Lies in ``[0, log N]``.

    The sum is exactly rounded, so permuting the shares gives a bitwise
    identical result.
    """
    p = np.asarray(shares, dtype=float)
    if np.any(p < 0):
        raise ValueError("shares must be nonnegative")
    if abs(p.sum() - 1.0) > 1e-12:
        raise ValueError(f"shares sum to {p.sum()!r}, not 1")
    return max(0.0, math.fsum(xlogy(p, p.size * p)))


def theil_decompose(spreads, ranks, n_states=None):
    """Split the Theil index of ``spreads`` into between- and within-class parts.

    With class shares ``q_x`` and class sizes ``N_x``::

        inter = sum_x q_x log(q_x N / N_x)
        intra = sum_x q_x T_x,   T_x = Theil of the shares within class x

    and ``total = inter + intra``.
    """
    p = shares_from_spreads(spreads)
    r = np.asarray(ranks, dtype=np.int64)
    if r.shape != p.shape:
        raise ValueError("spreads and ranks must have the same length")
    D = int(n_states or r.max())
    total, inter, intra, q, within = _decompose(p[None, :], r[None, :], D)
    return TheilDecomposition(float(total[0]), float(inter[0]), float(intra[0]), q[0], within[0])


def theil_rows(spreads):
    """Theil index of each row of ``spreads`` (..., N); NaN for all-zero rows."""
    s = np.asarray(spreads, dtype=float)
    tot = s.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = s / tot
    out = xlogy(p, s.shape[-1] * p).sum(axis=-1)
    return np.where(tot[..., 0] > 0, out, np.nan)


def decompose_rows(spreads, ranks, n_states):
    """Vectorized :func:`theil_decompose` over leading axes.

    Returns ``(total, inter, intra)``, each NaN where the row is all zero.
    """
    s = np.asarray(spreads, dtype=float)
    tot = s.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = s / tot
    total, inter, intra, _, _ = _decompose(p, np.asarray(ranks, dtype=np.int64), n_states)
    bad = ~(tot[..., 0] > 0)
    for a in (total, inter, intra):
        a[bad] = np.nan
    return total, inter, intra


def _decompose(p, r, D):
    N = p.shape[-1]
    onehot = r[..., None] == np.arange(1, D + 1)  # (..., N, D)
    q = np.einsum("...n,...nd->...d", p, onehot)
    size = onehot.sum(axis=-2)  # N_x
    with np.errstate(invalid="ignore", divide="ignore"):
        inter = xlogy(q, np.where(size > 0, q * N / np.maximum(size, 1), 1.0)).sum(axis=-1)
        qc = np.take_along_axis(q, r - 1, axis=-1)
        nc = np.take_along_axis(size, r - 1, axis=-1)
        cond = np.where(qc > 0, p / np.where(qc > 0, qc, 1.0), 0.0)
        terms = xlogy(p, nc * cond)
        intra = terms.sum(axis=-1)
        within_terms = xlogy(cond, nc * cond)
    within = np.einsum("...n,...nd->...d", within_terms, onehot)
    total = xlogy(p, N * p).sum(axis=-1)
    return total, inter, intra, q, within


@dataclass(frozen=True)
class RewardModel:
    """Rating chain plus per-class expected spreads and the initial allocation.

    ``class_means[j - 1]`` is ``E[W_j]``; classes never observed may be NaN
    as long as the chain cannot reach them.
    """

    chain: SegmentedChainModel
    class_means: np.ndarray
    initial_ranks: np.ndarray

    def __post_init__(self):
        m = np.array(self.class_means, dtype=float)
        r = np.array(self.initial_ranks, dtype=np.int64)
        if m.shape != (self.chain.D,):
            raise ValueError(f"need {self.chain.D} class means, got {m.shape}")
        if np.any(m[np.isfinite(m)] < 0):
            raise ValueError("class means must be nonnegative")
        if r.ndim != 1 or r.size == 0 or r.min() < 1 or r.max() > self.chain.D:
            raise ValueError("initial ranks must be a non-empty vector in 1..D")
        m.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "class_means", m)
        object.__setattr__(self, "initial_ranks", r)

    @property
    def n0(self):
        """Number of countries starting in each class."""
        return np.bincount(self.initial_ranks - 1, minlength=self.chain.D)

    @property
    def N(self):
        return self.initial_ranks.size


def _weighted(prob, values):
    """``prob @ values`` with NaN values ignored where the probability is 0.

    Rows that put positive mass on a NaN value come out NaN.
    """
    bad = ~np.isfinite(values)
    out = prob @ np.where(bad, 0.0, values)
    if bad.any():
        out[np.any(prob[..., bad] > 0, axis=-1)] = np.nan
    return out


def _step_means(model, horizon):
    """``m[t, i] = sum_j P^{(t)}_{ij} E[W_j]`` for ``t = 0..horizon``."""
    props = propagation_path(model.chain, horizon)
    return props, _weighted(props, model.class_means)


def _need(values, what):
    if np.any(np.isnan(values)):
        raise ValueError(f"chain reaches a rating class with no {what}")
    return values


def total_spread_path(model, horizon):
    """``V[t, i - 1]`` = expected spread paid over dates ``1..t`` starting from rank ``i``.

    Columns of starting ranks that can reach a class without spread data are NaN.
    """
    _, m = _step_means(model, horizon)
    V = np.zeros_like(m)
    V[1:] = np.cumsum(m[1:], axis=0)
    return V


def expected_total_spread_by_rank(model, i, t):
    if not 1 <= i <= model.chain.D:
        raise ValueError(f"rank {i} outside 1..{model.chain.D}")
    if t < 0:
        raise ValueError("t must be >= 0")
    return float(_need(total_spread_path(model, t)[:, i - 1], "spread samples")[t])


def expected_total_spread(model, t):
    """Expected total spread of the whole group, ``sum_j n_j(0) V_j(t)``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return float(expected_total_spread_path(model, t)[t])


def expected_total_spread_path(model, horizon):
    """``sum_j n_j(0) V_j(t)`` for ``t = 0..horizon``."""
    V = total_spread_path(model, horizon)
    used = model.n0 > 0
    return _need(V[:, used], "spread samples") @ model.n0[used]


def product_moment_path(model, second_moments, alpha, beta, horizon):
    """``E[TC_alpha(t) * TC_beta(t)]`` for ``t = 0..horizon``.

    Parameters
    ----------
    second_moments : ndarray (D, D)
        ``E[W_j W_k]`` with ``W_j`` the spread of ``alpha`` in class ``j`` and
        ``W_k`` that of ``beta`` in class ``k``, under their pairwise copula.
    alpha, beta : int
        Distinct country indices into ``model.initial_ranks``.
    """
    if alpha == beta:
        raise ValueError("product moment is defined for two distinct countries")
    M = np.asarray(second_moments, dtype=float)
    D = model.chain.D
    if M.shape != (D, D):
        raise ValueError(f"second moments must be {D}x{D}")
    a = model.initial_ranks[alpha] - 1
    b = model.initial_ranks[beta] - 1
    props, m = _step_means(model, horizon)
    pa, pb = props[:, a], props[:, b]
    ma, mb = _need(m[:, a], "spread samples"), _need(m[:, b], "spread samples")
    joint = pa[:, :, None] * pb[:, None, :]
    bad = ~np.isfinite(M)
    if np.any(joint[:, bad] > 0):
        raise ValueError("chain reaches a class pair with no second moment")
    same_time = (joint * np.where(bad, 0.0, M)).sum(axis=(1, 2))
    Va = np.concatenate([[0.0], np.cumsum(ma[1:])])
    Vb = np.concatenate([[0.0], np.cumsum(mb[1:])])
    out = np.zeros(horizon + 1)
    for t in range(1, horizon + 1):
        out[t] = out[t - 1] + Va[t - 1] * mb[t] + Vb[t - 1] * ma[t] + same_time[t]
    return out


def product_moment(model, second_moments, alpha, beta, t):
    if t < 0:
        raise ValueError("t must be >= 0")
    return float(product_moment_path(model, second_moments, alpha, beta, t)[t])


def total_spread_covariance(model, second_moments, alpha, beta, t, variances=None):
    """Covariance and correlation of two countries' cumulative spreads at ``t``.

    ``sigma = E[TC_a TC_b] - V_a(t) V_b(t)``. The correlation divides by the
    standard deviations in ``variances = (var_a, var_b)`` (estimated by
    simulation); without them it is NaN, and it is 0 when either variance is 0.
    """
    V = total_spread_path(model, t)[t]
    va = V[model.initial_ranks[alpha] - 1]
    vb = V[model.initial_ranks[beta] - 1]
    sigma = product_moment(model, second_moments, alpha, beta, t) - va * vb
    if variances is None:
        return float(sigma), float("nan")
    var_a, var_b = variances
    if var_a <= 0 or var_b <= 0:
        warnings.warn("zero variance of a cumulative spread; correlation set to 0", stacklevel=2)
        return float(sigma), 0.0
    return float(sigma), float(sigma / np.sqrt(var_a * var_b))


def expected_theil_exact(chain, marginals, initial_ranks, t, max_terms=1_000_000):
    """Exact ``E[DT(t)]`` by enumeration, for independent spreads.

    Sums over every rating configuration at date ``t`` and every combination
    of class samples. Outcomes where all spreads are zero are excluded and
    the rest renormalized, matching the simulation's skip rule. Only
    feasible for tiny instances.
    """
    table = marginals if isinstance(marginals, dict) else {m.rank: m for m in marginals}
    initial = [int(r) for r in initial_ranks]
    N = len(initial)
    D = chain.D
    rows = [piecewise_propagate(chain, i, t) for i in initial]
    acc = 0.0
    mass = 0.0
    for config in itertools.product(range(1, D + 1), repeat=N):
        p_config = float(np.prod([rows[h][config[h] - 1] for h in range(N)]))
        if p_config == 0.0:
            continue
        pools = []
        for x in config:
            m = table.get(x)
            if m is None or m.empty:
                raise ValueError(f"no spread marginal for rating class {x}")
            pools.append(m.samples)
        n_terms = int(np.prod([len(p) for p in pools]))
        if n_terms > max_terms:
            raise ValueError(f"{n_terms} sample combinations exceed max_terms={max_terms}")
        w = p_config / n_terms
        for draw in itertools.product(*pools):
            s = np.asarray(draw, dtype=float)
            if s.sum() <= 0:
                continue
            acc += w * theil_index(s / s.sum())
            mass += w
    if mass == 0.0:
        raise ValueError("every outcome has an all-zero spread vector")
    return acc / mass
