import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from sovrisk.changepoint import (
    ChangePointDetector,
    bic_score,
    bootstrap_critical,
    bootstrap_lrt,
    chi2_critical,
    find_changepoints,
    lrt_statistic,
    model_select,
    nearest_rank,
    segment_loglik,
)
from sovrisk.markov import CountTensor, SegmentedChainModel, simulate_paths

CALM = np.array([[0.99, 0.01], [0.01, 0.99]])
BUSY = np.array([[0.9, 0.1], [0.1, 0.9]])


def planted(seed, matrices, taus, n_countries=10, n_dates=2000):
    rng = np.random.default_rng(seed)
    D = len(matrices[0])
    model = SegmentedChainModel(taus, matrices)
    initial = rng.integers(1, D + 1, n_countries)
    return simulate_paths(model, initial, rng.random((n_dates - 1, n_countries))).T


# -- likelihood ------------------------------------------------------------


def test_segment_loglik_examples():
    assert segment_loglik(CountTensor(np.array([[1, 1, 1]]), 2), 0, 2) == 0.0
    assert segment_loglik(CountTensor(np.array([[1, 1, 2]]), 2), 0, 2) == pytest.approx(
        2 * math.log(0.5), abs=1e-12)
    assert segment_loglik(CountTensor(np.array([[1, 2, 1]]), 2), 1, 1) == 0.0
    with pytest.raises(ValueError):
        segment_loglik(CountTensor(np.array([[1, 2, 1]]), 2), 2, 1)


def _oracle_loglik(ranks, a, b, D):
    # direct formula from the per-segment transition counts
    n = np.zeros((D, D))
    for path in ranks:
        for t in range(a, b):
            n[path[t] - 1, path[t + 1] - 1] += 1
    total = 0.0
    for i in range(D):
        row = n[i].sum()
        for j in range(D):
            if n[i, j]:
                total += n[i, j] * math.log(n[i, j] / row)
    return total


@given(st.integers(0, 2 ** 31), st.integers(2, 4))
def test_segment_loglik_matches_direct_formula(seed, D):
    rng = np.random.default_rng(seed)
    ranks = rng.integers(1, D + 1, (3, 25))
    table = CountTensor(ranks, D)
    a, b = sorted(rng.choice(25, 2, replace=False))
    assert segment_loglik(table, a, b) == pytest.approx(_oracle_loglik(ranks, a, b, D), abs=1e-9)
    assert segment_loglik(table, a, b) <= 0.0


@given(st.integers(0, 2 ** 31))
def test_split_fit_never_worse_than_pooled(seed):
    rng = np.random.default_rng(seed)
    table = CountTensor(rng.integers(1, 4, (4, 40)), 3)
    a, c = 3, 37
    b = int(rng.integers(a + 1, c))
    assert segment_loglik(table, a, b) + segment_loglik(table, b, c) >= \
        segment_loglik(table, a, c) - 1e-9


# -- exact search ----------------------------------------------------------


def brute_force(ranks, k, min_seg, D):
    n = ranks.shape[1] - 1
    best, arg = -np.inf, None
    for taus in itertools.combinations(range(min_seg, n - min_seg + 1), k):
        bounds = (0,) + taus + (n,)
        if any(b - a < min_seg for a, b in zip(bounds, bounds[1:])):
            continue
        v = sum(_oracle_loglik(ranks, a, b, D) for a, b in zip(bounds, bounds[1:]))
        if arg is None or v > best + 1e-9 * max(1.0, abs(best)):
            best, arg = v, taus
    return arg, best


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("k", [1, 2])
def test_dp_equals_brute_force(seed, k):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(20, 61))
    ranks = rng.integers(1, 3, (3, T))
    taus, ll = brute_force(ranks, k, 4, 2)
    assert find_changepoints(ranks, k, 4, n_states=2) == taus


def test_ties_resolve_to_earliest_breaks():
    # a constant panel: every break vector gives log-likelihood 0
    ranks = np.ones((2, 30), dtype=int)
    assert find_changepoints(ranks, 2, 4, n_states=2) == (4, 8)


def test_infeasible_min_seg():
    with pytest.raises(ValueError):
        find_changepoints(np.ones((2, 10), dtype=int), 2, 4, n_states=2)


def test_loglik_non_decreasing_in_k():
    ranks = planted(3, (CALM, BUSY), (300,), n_dates=600)
    fit = model_select(ranks, 3, n_states=2)
    ll = [fit.loglik_by_k[k] for k in sorted(fit.loglik_by_k)]
    assert all(b >= a - 1e-9 for a, b in zip(ll, ll[1:]))


@pytest.mark.slow
def test_single_break_recovered():
    hits = 0
    for seed in range(50):
        (tau,) = find_changepoints(planted(seed, (CALM, BUSY), (1000,)), 1, n_states=2)
        hits += abs(tau - 1000) <= 25
    assert hits >= 45


def test_two_breaks_recovered_and_selected():
    ranks = planted(11, (CALM, BUSY, CALM), (700, 1400), n_dates=2100)
    taus = find_changepoints(ranks, 2, n_states=2)
    assert abs(taus[0] - 700) <= 25 and abs(taus[1] - 1400) <= 25
    assert model_select(ranks, 3, n_states=2).k == 2


def test_two_stage_close_to_exact():
    ranks = planted(5, (CALM, BUSY), (1000,))
    exact = find_changepoints(ranks, 1, n_states=2)
    approx = find_changepoints(ranks, 1, n_states=2, two_stage=True)
    assert abs(exact[0] - approx[0]) <= 25


# -- BIC -------------------------------------------------------------------


def test_bic_examples():
    assert bic_score(-530.02, 14, 5374) == pytest.approx(1180.3, abs=0.1)
    assert bic_score(-361.76, 36, 5374) == pytest.approx(1032.7, abs=0.1)
    assert bic_score(0.0, 0, 5374) == 0.0
    with pytest.raises(ValueError):
        bic_score(-1.0, 1, 1)


@pytest.mark.slow
def test_homogeneous_selects_no_break():
    P = np.array([[0.9, 0.07, 0.03], [0.05, 0.9, 0.05], [0.03, 0.07, 0.9]])
    zero = sum(model_select(planted(s, (P,), (), n_dates=600), 2, n_states=3).k == 0
               for s in range(50))
    assert zero >= 45


def test_planted_break_selects_one():
    assert model_select(planted(0, (CALM, BUSY), (1000,)), 3, n_states=2).k == 1


# -- likelihood-ratio test -------------------------------------------------


def test_lrt_zero_when_segments_agree():
    # both halves have identical counts, so the segment MLEs coincide
    half = np.array([[1, 1, 2, 2, 1]])
    ranks = np.concatenate([half, half[:, 1:]], axis=1)
    assert lrt_statistic(ranks, (4,), n_states=2) == pytest.approx(0.0, abs=1e-12)


def test_lrt_large_for_distinct_regimes():
    df = 2 * 1 * 1
    crit = chi2_critical(df)
    big = sum(lrt_statistic(planted(s, (CALM, BUSY), (1000,)), (1000,), n_states=2) > crit
              for s in range(20))
    assert big >= 19


@given(st.integers(0, 2 ** 31))
def test_lrt_nonnegative(seed):
    rng = np.random.default_rng(seed)
    ranks = rng.integers(1, 4, (3, 30))
    assert lrt_statistic(ranks, (10, 20), n_states=3) >= 0.0


def test_nearest_rank_picks_190th_of_199():
    values = np.arange(199, 0, -1, dtype=float)
    assert nearest_rank(values, 0.95) == 190.0


def test_bootstrap_is_deterministic_and_worker_independent():
    ranks = planted(2, (BUSY,), (), n_countries=5, n_dates=200)
    a = bootstrap_lrt(ranks, 1, reps=12, seed=9, n_states=2, n_jobs=1)
    b = bootstrap_lrt(ranks, 1, reps=12, seed=9, n_states=2, n_jobs=2)
    assert np.array_equal(a, b)
    assert bootstrap_critical(ranks, 1, reps=12, seed=9, n_states=2) == \
        bootstrap_critical(ranks, 1, reps=12, seed=9, n_states=2)


def test_bootstrap_critical_exceeds_chi2_on_average():
    # maximizing over the break position inflates the statistic
    crits = [bootstrap_critical(planted(s, (BUSY,), (), n_countries=5, n_dates=300), 1,
                                reps=39, seed=s, n_states=2) for s in range(5)]
    assert np.mean(crits) >= stats.chi2.ppf(0.95, 2)


def test_detector_estimator():
    ranks = planted(0, (CALM, BUSY), (1000,))
    det = ChangePointDetector(n_states=2, max_breaks=2, n_bootstrap=19, random_state=1).fit(ranks)
    assert det.n_breaks_ == 1 and abs(det.taus_[0] - 1000) <= 25
    assert det.test_.lam > det.test_.critical_value
    assert det.test_.p_value == pytest.approx(1 / 20)
    assert det.test_.df == 2
    labels = det.transform(ranks)
    assert labels[0] == 0 and labels[-1] == 1
    assert set(det.get_params()) >= {"n_states", "max_breaks", "alpha", "n_bootstrap"}
    with pytest.raises(ValueError):
        ChangePointDetector(n_states=2, alpha=1.5).fit(ranks)


def test_k_max_zero_reports_only_k0():
    fit = model_select(planted(0, (CALM, BUSY), (1000,)), 0, n_states=2)
    assert fit.k == 0 and list(fit.bic_by_k) == [0]
