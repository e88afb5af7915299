"""Joint simulation of rating paths and copula-coupled spreads.

Every iteration draws from its own stream ``(seed, iteration)``: first the
uniforms driving the rating chains, then the normals feeding the copula.
Iterations are grouped in fixed-size batches and reduced in iteration
order, so the result is bit-identical for any number of workers.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from ._parallel import ordered_map
from ._validation import check_random_state, stream
from .copula import correlation_factor, spreads_from_normals
from .markov import SegmentedChainModel, simulate_paths
from .risk import decompose_rows

__all__ = [
    "SimulationConfig",
    "SimulationResult",
    "simulate_rating_path",
    "estimate_drift",
    "run_simulation",
    "expected_dynamic_theil",
]


@dataclass(frozen=True)
class SimulationConfig:
    """Monte Carlo settings.

    ``corr_step`` is the date at which covariance/correlation of cumulative
    spreads is reported (default: middle of the horizon). ``batch_size``
    fixes how iterations are grouped; it affects summation order, so keep
    it constant when comparing runs.
    """

    horizon: int = 1095
    iterations: int = 200
    seed: int = 0
    drift_adjustment: bool = False
    corr_step: int | None = None
    track_theil: bool = True
    keep_traces: bool = False
    batch_size: int = 64
    n_jobs: int | None = None
    last_segment_only: bool = True

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.corr_step is not None and not 0 <= self.corr_step <= self.horizon:
            raise ValueError("corr_step must lie in 0..horizon")

    @property
    def report_step(self):
        return self.horizon // 2 if self.corr_step is None else self.corr_step


@dataclass
class SimulationResult:
    steps: np.ndarray
    mean_dt: np.ndarray
    q05: np.ndarray
    q95: np.ndarray
    mean_inter: np.ndarray
    mean_intra: np.ndarray
    skipped: np.ndarray  # per step: iterations whose spread vector was all zero
    mean_totals: np.ndarray  # (horizon+1, N) mean cumulative spread per country
    totals_at_report: np.ndarray  # (iterations, N) cumulative spreads at report_step
    totals_at_horizon: np.ndarray  # (iterations, N)
    report_step: int
    covariance: np.ndarray
    correlation: np.ndarray
    countries: tuple = ()
    dt_traces: np.ndarray | None = field(default=None, repr=False)

    @property
    def iterations(self):
        return self.totals_at_horizon.shape[0]


def simulate_rating_path(model, initial, horizon, rng=None):
    """One rank path of length ``horizon + 1`` starting at ``initial``.

    Each step inverts the cumulative row of the current segment's matrix at
    a fresh uniform.
    """
    rng = check_random_state(rng)
    if isinstance(model, np.ndarray):
        model = SegmentedChainModel.homogeneous(model)
    u = rng.random((int(horizon), 1))
    return simulate_paths(model, np.array([initial]), u)[:, 0]


def estimate_drift(spreads):
    """Per-country geometric mean of one-step spread ratios, minus one.

    Pairs with a zero spread at either end are skipped; countries without any
    usable pair get zero drift.
    """
    s = np.asarray(getattr(spreads, "spreads", spreads), dtype=float)
    a, b = s[:, :-1], s[:, 1:]
    ok = (a > 0) & (b > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(ok, np.log(np.where(ok, b / np.where(ok, a, 1.0), 1.0)), 0.0)
    n = ok.sum(axis=1)
    return np.expm1(np.where(n > 0, logs.sum(axis=1) / np.maximum(n, 1), 0.0))


def _simulate_batch(indices, *, model, A, marginals, initial, horizon, seed, n_states,
                    track_theil, drift, report_step):
    N = initial.size
    B = len(indices)
    u = np.empty((horizon, B, N))
    e = np.empty((horizon + 1, B, N))
    for b, i in enumerate(indices):
        rng = stream(seed, i)
        u[:, b] = rng.random((horizon, N))
        e[:, b] = rng.standard_normal((horizon + 1, N))
    ranks = simulate_paths(model, np.broadcast_to(initial, (B, N)), u)
    spreads = spreads_from_normals(e @ A.T, ranks, marginals)
    if drift is not None:
        spreads *= (1.0 + drift) ** np.arange(horizon + 1)[:, None, None]
    cum = np.zeros_like(spreads)
    np.cumsum(spreads[1:], axis=0, out=cum[1:])
    out = {
        "sum_totals": cum.sum(axis=1),
        "at_report": cum[report_step].copy(),
        "at_horizon": cum[horizon].copy(),
    }
    if track_theil:
        total, inter, intra = decompose_rows(spreads, ranks, n_states)
        out["dt"], out["inter"], out["intra"] = total.T, inter.T, intra.T
    return out


def _corr(cov):
    sd = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    flat = sd == 0
    if flat.any():
        warnings.warn("zero variance of a simulated cumulative spread; correlation set to 0",
                      stacklevel=3)
    safe = np.where(flat, 1.0, sd)
    C = cov / np.outer(safe, safe)
    C[flat, :] = 0.0
    C[:, flat] = 0.0
    np.fill_diagonal(C, np.where(flat, 0.0, 1.0))
    return C


def run_simulation(chain, marginals, copula, initial_ranks, cfg=None, *, drift=None):
    """Monte Carlo of the dynamic Theil index and cumulative spreads.

    Parameters
    ----------
    chain : SegmentedChainModel or ndarray
        Rating dynamics. Unless ``cfg.last_segment_only`` is False, only the
        final segment's matrix drives the simulation.
    marginals : sequence of ClassMarginal or dict rank -> ClassMarginal
    copula : CopulaModel
    initial_ranks : array of int, shape (N,)
    cfg : SimulationConfig
    drift : ndarray (N,), optional
        Per-step multiplicative spread drift; required when
        ``cfg.drift_adjustment`` is set (see :func:`estimate_drift`).
    """
    cfg = cfg or SimulationConfig()
    if isinstance(chain, np.ndarray):
        chain = SegmentedChainModel.homogeneous(chain)
    model = chain.last_segment() if cfg.last_segment_only else chain
    initial = np.asarray(initial_ranks, dtype=np.int64)
    N = initial.size
    if copula.N != N:
        raise ValueError(f"copula has {copula.N} countries, initial ranks {N}")
    if cfg.drift_adjustment:
        if drift is None:
            raise ValueError("drift_adjustment needs a drift vector")
        drift = np.asarray(drift, dtype=float)
    else:
        drift = None
    H = cfg.horizon
    batches = [list(range(a, min(a + cfg.batch_size, cfg.iterations)))
               for a in range(0, cfg.iterations, cfg.batch_size)]
    fn = partial(_simulate_batch, model=model, A=correlation_factor(copula.R),
                 marginals=marginals, initial=initial, horizon=H, seed=cfg.seed,
                 n_states=model.D, track_theil=cfg.track_theil, drift=drift,
                 report_step=cfg.report_step)
    parts = ordered_map(fn, batches, cfg.n_jobs)

    sum_totals = np.zeros((H + 1, N))
    for p in parts:
        sum_totals += p["sum_totals"]
    at_report = np.concatenate([p["at_report"] for p in parts])
    at_horizon = np.concatenate([p["at_horizon"] for p in parts])
    cov = np.cov(at_report, rowvar=False, ddof=1).reshape(N, N) if cfg.iterations > 1 \
        else np.zeros((N, N))

    steps = np.arange(H + 1)
    nan = np.full(H + 1, np.nan)
    stats = dict(mean_dt=nan, q05=nan, q95=nan, mean_inter=nan, mean_intra=nan,
                 skipped=np.zeros(H + 1, dtype=np.int64))
    traces = None
    if cfg.track_theil:
        dt = np.concatenate([p["dt"] for p in parts])
        inter = np.concatenate([p["inter"] for p in parts])
        intra = np.concatenate([p["intra"] for p in parts])
        skipped = np.isnan(dt).sum(axis=0)
        if skipped.any():
            warnings.warn(f"{int(skipped.sum())} simulated spread vectors were all zero; "
                          "their Theil index is skipped", stacklevel=2)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            stats = dict(
                mean_dt=np.nanmean(dt, axis=0),
                q05=np.nanquantile(dt, 0.05, axis=0),
                q95=np.nanquantile(dt, 0.95, axis=0),
                mean_inter=np.nanmean(inter, axis=0),
                mean_intra=np.nanmean(intra, axis=0),
                skipped=skipped,
            )
        if cfg.keep_traces:
            traces = dt
    return SimulationResult(
        steps=steps,
        mean_totals=sum_totals / cfg.iterations,
        totals_at_report=at_report,
        totals_at_horizon=at_horizon,
        report_step=cfg.report_step,
        covariance=cov,
        correlation=_corr(cov),
        countries=tuple(copula.countries),
        dt_traces=traces,
        **stats,
    )


def expected_dynamic_theil(result):
    """Per-step mean of the dynamic Theil index across iterations."""
    if result.mean_dt is None or np.all(np.isnan(result.mean_dt)):
        raise ValueError("simulation ran without Theil tracking")
    return result.mean_dt
