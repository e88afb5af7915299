import math

import numpy as np
import pytest

from sovrisk.copula import CopulaModel
from sovrisk.marginals import ClassMarginal
from sovrisk.markov import SegmentedChainModel
from sovrisk.montecarlo import (
    SimulationConfig,
    estimate_drift,
    expected_dynamic_theil,
    run_simulation,
    simulate_rating_path,
)
from sovrisk.risk import RewardModel, expected_theil_exact, theil_index, total_spread_path

P3 = np.array([[0.90, 0.08, 0.02], [0.05, 0.85, 0.10], [0.02, 0.08, 0.90]])


def two_point(rank, lo, hi):
    return ClassMarginal(rank, [lo, hi])


@pytest.fixture
def marg3():
    return [two_point(1, 0.5, 1.5), two_point(2, 2.0, 4.0), two_point(3, 5.0, 9.0)]


def test_identity_chain_constant_path():
    path = simulate_rating_path(np.eye(4), 3, 50, np.random.default_rng(0))
    assert path.tolist() == [3] * 51


def test_absorbing_state_stays():
    P = np.array([[0.5, 0.5], [0.0, 1.0]])
    rng = np.random.default_rng(1)
    for _ in range(20):
        path = simulate_rating_path(P, 1, 40, rng)
        hit = np.flatnonzero(path == 2)
        if hit.size:
            assert np.all(path[hit[0]:] == 2)


def test_one_step_frequencies():
    rng = np.random.default_rng(2)
    nxt = np.array([simulate_rating_path(P3, 2, 1, rng)[1] for _ in range(2000)])
    freq = np.bincount(nxt - 1, minlength=3) / nxt.size
    se = np.sqrt(P3[1] * (1 - P3[1]) / nxt.size)
    assert np.all(np.abs(freq - P3[1]) <= 4 * se)


def test_degenerate_inputs_give_constant_theil():
    marg = [ClassMarginal(1, [1.0]), ClassMarginal(2, [3.0]), ClassMarginal(3, [6.0])]
    cop = CopulaModel(("a", "b", "c", "d"), np.eye(4))
    initial = [1, 2, 3, 3]
    with pytest.warns(UserWarning, match="zero variance"):
        res = run_simulation(np.eye(3), marg, cop, initial,
                             SimulationConfig(horizon=30, iterations=20, seed=4))
    expected = theil_index(np.array([1.0, 3.0, 6.0, 6.0]) / 16.0)
    np.testing.assert_allclose(res.mean_dt, expected, atol=1e-15)
    np.testing.assert_array_equal(res.q05, res.q95)
    assert np.all(res.covariance == 0.0)


def test_workers_do_not_change_results(marg3):
    cop = CopulaModel(("a", "b", "c"), [[1.0, 0.5, 0.2], [0.5, 1.0, 0.1], [0.2, 0.1, 1.0]])
    cfg = dict(horizon=40, iterations=150, seed=11, batch_size=16, keep_traces=True)
    a = run_simulation(P3, marg3, cop, [1, 2, 3], SimulationConfig(n_jobs=1, **cfg))
    b = run_simulation(P3, marg3, cop, [1, 2, 3], SimulationConfig(n_jobs=3, **cfg))
    for name in ("mean_dt", "q05", "q95", "mean_inter", "mean_intra", "mean_totals",
                 "totals_at_report", "totals_at_horizon", "covariance", "correlation", "dt_traces"):
        assert np.array_equal(getattr(a, name), getattr(b, name)), name


def test_single_iteration_trace(marg3):
    cop = CopulaModel(("a", "b"), np.eye(2))
    res = run_simulation(P3, marg3, cop, [1, 3],
                         SimulationConfig(horizon=25, iterations=1, seed=2, keep_traces=True))
    np.testing.assert_array_equal(expected_dynamic_theil(res), res.dt_traces[0])


def test_bounds_and_decomposition(marg3):
    cop = CopulaModel(("a", "b", "c", "d"), np.eye(4))
    res = run_simulation(P3, marg3, cop, [1, 1, 2, 3],
                         SimulationConfig(horizon=60, iterations=200, seed=5))
    dt = expected_dynamic_theil(res)
    assert np.all(dt >= 0) and np.all(dt <= math.log(4))
    np.testing.assert_allclose(res.mean_inter + res.mean_intra, dt, atol=1e-10)
    assert res.report_step == 30


def test_mean_totals_match_recursion(marg3):
    cop = CopulaModel(("a", "b", "c"), np.eye(3))
    t = 50
    res = run_simulation(P3, marg3, cop, [1, 2, 3],
                         SimulationConfig(horizon=t, iterations=4000, seed=6, corr_step=t,
                                          track_theil=False))
    means = [m.samples.mean() for m in marg3]
    V = total_spread_path(RewardModel(SegmentedChainModel.homogeneous(P3), means, [1, 2, 3]), t)[t]
    se = res.totals_at_horizon.std(axis=0, ddof=1) / math.sqrt(res.iterations)
    assert np.all(np.abs(res.mean_totals[t] - V) <= 3 * se)


def test_independence_low_correlation(marg3):
    cop = CopulaModel(("a", "b"), np.eye(2))
    res = run_simulation(P3, marg3, cop, [2, 2],
                         SimulationConfig(horizon=30, iterations=1000, seed=7, track_theil=False))
    assert abs(res.correlation[0, 1]) < 0.1


def test_small_instance_matches_enumeration():
    P = np.array([[0.7, 0.3], [0.4, 0.6]])
    marg = [two_point(1, 1.0, 2.0), two_point(2, 3.0, 7.0)]
    cop = CopulaModel(("a", "b"), np.eye(2))
    chain = SegmentedChainModel.homogeneous(P)
    exact = expected_theil_exact(chain, marg, [1, 2], 1)
    res = run_simulation(chain, marg, cop, [1, 2],
                         SimulationConfig(horizon=1, iterations=10_000, seed=8, keep_traces=True))
    se = res.dt_traces[:, 1].std(ddof=1) / math.sqrt(10_000)
    assert abs(res.mean_dt[1] - exact) <= 3 * se


def test_all_zero_steps_are_skipped():
    marg = [ClassMarginal(1, [0.0, 0.0, 1.0])]
    cop = CopulaModel(("a", "b"), np.eye(2))
    with pytest.warns(UserWarning, match="all zero"):
        res = run_simulation(np.eye(1), marg, cop, [1, 1],
                             SimulationConfig(horizon=5, iterations=50, seed=0))
    assert res.skipped.sum() > 0
    assert np.all(np.isfinite(res.mean_dt))


def test_last_segment_only_by_default(marg3):
    chain = SegmentedChainModel((5,), (np.eye(3), np.array([[0, 0, 1.0], [0, 0, 1.0], [0, 0, 1.0]])))
    cop = CopulaModel(("a",), np.eye(1))
    res = run_simulation(chain, marg3, cop, [1], SimulationConfig(horizon=3, iterations=5, seed=0,
                                                                   keep_traces=True))
    # the final segment sends everyone to class 3 at the first step
    assert np.all(res.mean_totals[1] >= 5.0)
    full = run_simulation(chain, marg3, cop, [1], SimulationConfig(
        horizon=3, iterations=5, seed=0, last_segment_only=False))
    assert np.all(full.mean_totals[1] <= 1.5)


def test_estimate_drift_geometric():
    s = np.vstack([2.0 * 1.01 ** np.arange(20), np.full(20, 3.0), np.zeros(20)])
    np.testing.assert_allclose(estimate_drift(s), [0.01, 0.0, 0.0], atol=1e-12)


def test_drift_scales_spreads(marg3):
    cop = CopulaModel(("a",), np.eye(1))
    cfg = SimulationConfig(horizon=10, iterations=3, seed=1, drift_adjustment=True)
    flat = run_simulation(np.eye(3), marg3, cop, [2], SimulationConfig(horizon=10, iterations=3, seed=1))
    grown = run_simulation(np.eye(3), marg3, cop, [2], cfg, drift=np.array([0.1]))
    assert np.all(grown.mean_totals[10] > flat.mean_totals[10])
    with pytest.raises(ValueError):
        run_simulation(np.eye(3), marg3, cop, [2], cfg)


def test_config_validation():
    for bad in (dict(horizon=0), dict(iterations=0), dict(batch_size=0), dict(horizon=5, corr_step=6)):
        with pytest.raises(ValueError):
            SimulationConfig(**bad)
    assert SimulationConfig().horizon == 1095 and SimulationConfig().iterations == 200
    assert SimulationConfig().report_step == 547


def test_copula_size_mismatch(marg3):
    with pytest.raises(ValueError):
        run_simulation(P3, marg3, CopulaModel(("a",), np.eye(1)), [1, 2], SimulationConfig(horizon=2))
