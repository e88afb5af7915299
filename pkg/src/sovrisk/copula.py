"""Gaussian copula over country spreads with rating-class empirical marginals.

The correlation matrix is fitted once per country pair from normal scores of
the observed spread series. When sampling, each country's uniform is mapped
through the marginal of the class that country currently occupies.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import rankdata
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_random_state, check_rank_matrix, check_spread_matrix
from .marginals import quantile

__all__ = [
    "CopulaModel",
    "nearest_correlation",
    "normal_scores",
    "fit_copula",
    "correlation_factor",
    "sample_joint",
    "spreads_from_normals",
    "joint_second_moment",
    "second_moment_matrix",
    "independence_second_moments",
    "GaussianCopula",
]


@dataclass(frozen=True)
class CopulaModel:
    countries: tuple
    R: np.ndarray
    constant: tuple = ()

    def __post_init__(self):
        R = np.array(self.R, dtype=float)
        if R.ndim != 2 or R.shape[0] != R.shape[1] or R.shape[0] != len(self.countries):
            raise ValueError("R must be square with one row per country")
        if not np.allclose(R, R.T, atol=1e-12) or not np.allclose(np.diag(R), 1.0, atol=1e-12):
            raise ValueError("R must be symmetric with unit diagonal")
        if np.linalg.eigvalsh(R).min() < -1e-10:
            raise ValueError("R is not positive semi-definite; repair it with nearest_correlation")
        R.setflags(write=False)
        object.__setattr__(self, "countries", tuple(self.countries))
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "constant", tuple(self.constant))

    @property
    def N(self):
        return len(self.countries)

    def to_csv(self):
        lines = ["country," + ",".join(self.countries)]
        for c, row in zip(self.countries, self.R):
            lines.append(c + "," + ",".join(f"{v:.17g}" for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text):
        rows = [line.split(",") for line in text.strip().splitlines()]
        countries = tuple(rows[0][1:])
        R = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        return cls(countries, R)


def nearest_correlation(R):
    """Clip negative eigenvalues to 0, then rescale back to unit diagonal."""
    R = (np.asarray(R, dtype=float) + np.asarray(R, dtype=float).T) / 2
    w, V = np.linalg.eigh(R)
    if w.min() >= 0:
        out = R.copy()
    else:
        out = (V * np.clip(w, 0.0, None)) @ V.T
        d = np.sqrt(np.clip(np.diag(out), 1e-300, None))
        out = out / np.outer(d, d)
    out = (out + out.T) / 2
    np.fill_diagonal(out, 1.0)
    return np.clip(out, -1.0, 1.0)


def normal_scores(spreads):
    """Rank-based pseudo-observations ``rank / (T + 1)`` mapped through the normal quantile."""
    s = check_spread_matrix(spreads, allow_negative=True)
    u = rankdata(s, axis=1) / (s.shape[1] + 1)
    return ndtri(u)


def fit_copula(spreads, countries=None):
    """Normal-scores correlation of the country spread series, repaired to PSD.

    Constant series cannot be ranked; their rows and columns are set to the
    identity pattern and listed in ``CopulaModel.constant``.
    """
    s = check_spread_matrix(spreads, allow_negative=True)
    if countries is None:
        countries = getattr(spreads, "countries", None) or tuple(str(i) for i in range(s.shape[0]))
    if s.shape[1] < 3:
        raise ValueError("fitting a copula needs at least 3 dates")
    z = normal_scores(s)
    z = z - z.mean(axis=1, keepdims=True)
    norms = np.sqrt((z ** 2).sum(axis=1))
    flat = norms == 0
    if flat.any():
        warnings.warn(f"constant spread series {[countries[i] for i in np.flatnonzero(flat)]}; "
                      "treated as independent", stacklevel=2)
    safe = np.where(flat, 1.0, norms)
    R = (z @ z.T) / np.outer(safe, safe)
    R[flat, :] = 0.0
    R[:, flat] = 0.0
    np.fill_diagonal(R, 1.0)
    R = nearest_correlation(R)
    return CopulaModel(tuple(countries), R, tuple(countries[i] for i in np.flatnonzero(flat)))


def correlation_factor(R):
    """Matrix ``A`` with ``A @ A.T == R``.

    Cholesky when ``R`` is positive definite; otherwise a symmetric
    eigen-factor, which keeps perfectly correlated components identical.
    """
    R = np.asarray(getattr(R, "R", R), dtype=float)
    try:
        return np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(R)
        # round-off eigenvalues of a singular R would split comonotone components
        w = np.where(w > 1e-12 * max(w.max(), 1.0), w, 0.0)
        return V * np.sqrt(w)


def _lookup(marginals):
    if isinstance(marginals, dict):
        return marginals
    return {m.rank: m for m in marginals}


def spreads_from_normals(normals, ranks, marginals):
    """Map correlated standard normals to spreads through class quantiles.

    ``normals`` and ``ranks`` share a shape; each entry uses the marginal of
    its rank.
    """
    table = _lookup(marginals)
    u = ndtr(normals)
    ranks = np.asarray(ranks)
    out = np.empty(u.shape)
    for x in np.unique(ranks):
        m = table.get(int(x))
        if m is None or m.empty:
            raise ValueError(f"no spread marginal for rating class {int(x)}")
        mask = ranks == x
        out[mask] = quantile(m, u[mask])
    return out


def sample_joint(model, ranks, marginals, rng=None, size=None):
    """Draw the spread vector of all countries given their current ranks.

    Returns shape ``(N,)``, or ``(size, N)`` when ``size`` is given.
    """
    rng = check_random_state(rng)
    ranks = np.asarray(ranks, dtype=np.int64)
    if ranks.shape[-1] != model.N:
        raise ValueError(f"expected {model.N} ranks, got {ranks.shape[-1]}")
    A = correlation_factor(model.R)
    n = 1 if size is None else int(size)
    z = rng.standard_normal((n, model.N)) @ A.T
    out = spreads_from_normals(z, np.broadcast_to(ranks, z.shape), marginals)
    return out[0] if size is None else out


def joint_second_moment(model, rank_a, rank_b, marginals, mc_draws=10_000, rng=None, *,
                        country_a=0, country_b=1, return_se=False):
    """Monte Carlo ``E[W_a * W_b]`` under the bivariate sub-copula of two countries."""
    if mc_draws < 1:
        raise ValueError("mc_draws must be >= 1")
    rng = check_random_state(rng)
    rho = model.R[country_a, country_b]
    A = correlation_factor(np.array([[1.0, rho], [rho, 1.0]]))
    z = rng.standard_normal((int(mc_draws), 2)) @ A.T
    w = spreads_from_normals(z, np.broadcast_to([rank_a, rank_b], z.shape), marginals)
    prod = w[:, 0] * w[:, 1]
    est = float(prod.mean())
    if not return_se:
        return est
    se = float(prod.std(ddof=1) / np.sqrt(prod.size)) if prod.size > 1 else float("nan")
    return est, se


def second_moment_matrix(model, country_a, country_b, marginals, mc_draws=10_000, rng=None):
    """``M[j, k] = E[W_j W_k]`` for every pair of classes, one shared set of draws.

    Classes without samples give NaN rows/columns.
    """
    rng = check_random_state(rng)
    table = _lookup(marginals)
    D = max(table)
    rho = model.R[country_a, country_b]
    A = correlation_factor(np.array([[1.0, rho], [rho, 1.0]]))
    u = ndtr(rng.standard_normal((int(mc_draws), 2)) @ A.T)
    M = np.full((D, D), np.nan)
    cols = {}
    for x, m in table.items():
        if not m.empty:
            cols[x] = (quantile(m, u[:, 0]), quantile(m, u[:, 1]))
    for j in cols:
        for k in cols:
            M[j - 1, k - 1] = float(np.mean(cols[j][0] * cols[k][1]))
    return M


def independence_second_moments(class_means):
    """``E[W_j] * E[W_k]``: the exact second moments under the independence copula."""
    m = np.asarray(class_means, dtype=float)
    return np.outer(m, m)


class GaussianCopula(BaseEstimator):
    """Estimator wrapper around :func:`fit_copula` and :func:`sample_joint`.

    ``fit(X)`` takes spreads of shape (n_countries, n_dates).
    """

    def __init__(self, random_state=None):
        self.random_state = random_state

    def fit(self, X, y=None):
        self.model_ = fit_copula(X)
        self.correlation_ = self.model_.R
        return self

    def sample(self, ranks, marginals, n_samples=1):
        check_is_fitted(self, "model_")
        rng = check_random_state(self.random_state)
        ranks = check_rank_matrix(ranks)[0]
        return sample_joint(self.model_, ranks, marginals, rng, size=n_samples)

