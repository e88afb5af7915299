"""Synthetic rating/rate panels with a planted regime change.

Used by the test-suite and as a self-contained demo input for the command
line tool. Everything is derived from one seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ._validation import check_random_state
from .markov import SegmentedChainModel, simulate_paths
from .panel import RatePanel, RatingPanel, RatingScale, write_rates_csv, write_ratings_csv

__all__ = ["SyntheticFixture", "banded_matrix", "make_fixture", "write_fixture"]

# Country codes used for generated panels, in order.
_CODES = ("DE", "NL", "FI", "AT", "FR", "BE", "IE", "ES", "IT", "PT", "GR", "CY",
          "SK", "SI", "LT", "LV", "EE", "MT", "LU", "HR")


@dataclass(frozen=True)
class SyntheticFixture:
    ratings: RatingPanel
    rates: RatePanel
    scale: RatingScale
    chain: SegmentedChainModel  # the generating model
    class_spread: np.ndarray  # mean spread (percent) added per rank


def banded_matrix(n_states, stay, reach=1, absorbing=True):
    """Transition matrix with mass ``stay`` on the diagonal, the rest spread
    evenly over the ``reach`` nearest neighbours on each side.
    """
    P = np.zeros((n_states, n_states))
    for i in range(n_states):
        nb = [j for j in range(i - reach, i + reach + 1) if j != i and 0 <= j < n_states]
        P[i, i] = stay
        P[i, nb] = (1.0 - stay) / len(nb)
    if absorbing:
        P[-1] = 0.0
        P[-1, -1] = 1.0
    return P


def make_fixture(seed=0, n_countries=10, n_dates=720, break_at=None, n_states=8,
                 active_states=4, agency="sp", start="2015-01-01", rho=0.5, noise=0.05):
    """Simulate a daily rating panel with one break and matching interest rates.

    Ratings move among the best ``active_states`` classes, slowly before the
    break and faster after it. Rates are a common level plus a class premium
    plus equicorrelated noise, so spreads depend on ratings and co-move.

    Parameters
    ----------
    break_at : int, optional
        Transition index of the planted break; default is the middle.
    rho : float
        Correlation of the country rate shocks.
    """
    if not 2 <= active_states <= n_states:
        raise ValueError("active_states must lie in 2..n_states")
    if n_countries > len(_CODES):
        raise ValueError(f"at most {len(_CODES)} countries")
    rng = check_random_state(seed)
    break_at = (n_dates - 1) // 2 if break_at is None else int(break_at)

    def embed(stay):
        P = np.eye(n_states)
        P[:active_states, :active_states] = banded_matrix(active_states, stay, absorbing=False)
        return P

    chain = SegmentedChainModel((break_at,), (embed(0.995), embed(0.96)))
    initial = 1 + np.arange(n_countries) % active_states
    u = rng.random((n_dates - 1, n_countries))
    ranks = simulate_paths(chain, initial, u).T

    dates = np.datetime64(start, "D") + np.arange(n_dates)
    scale = RatingScale.default()
    ratings = RatingPanel(_CODES[:n_countries], dates, ranks, scale.D, agency)

    class_spread = 0.4 * np.arange(n_states) ** 1.5
    cov = np.full((n_countries, n_countries), rho) + (1.0 - rho) * np.eye(n_countries)
    shocks = rng.multivariate_normal(np.zeros(n_countries), cov, size=n_dates, method="cholesky").T
    level = 1.0 + 0.2 * np.sin(np.arange(n_dates) / 90.0)
    rates = np.round(level + class_spread[ranks - 1] + noise * shocks, 6)
    return SyntheticFixture(ratings, RatePanel(ratings.countries, dates, rates), scale, chain,
                            class_spread)


def write_fixture(directory, seed=0, **kwargs):
    """Write ``ratings.csv``, ``rates.csv`` and ``scale.json`` into ``directory``.

    Returns the fixture and a dict of written paths.
    """
    os.makedirs(directory, exist_ok=True)
    fx = make_fixture(seed, **kwargs)
    paths = {name: os.path.join(directory, name)
             for name in ("ratings.csv", "rates.csv", "scale.json")}
    write_ratings_csv(fx.ratings, fx.scale, paths["ratings.csv"])
    write_rates_csv(fx.rates, paths["rates.csv"])
    with open(paths["scale.json"], "w", encoding="utf-8") as fh:
        fh.write(fx.scale.to_json() + "\n")
    return fx, paths
