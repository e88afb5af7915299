"""Command-line front end: ingest -> changepoint -> estimate -> simulate -> report.

Every command reads its inputs from files and writes its outputs into the
output directory, so the stages can be run separately or in one go with
``run``. Outputs carry no timestamps; the seed is recorded in summary.json.

Exit codes: 0 success, 2 invalid input, 3 computation failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from importlib import resources

import numpy as np

from . import __version__
from .changepoint import lrt_test, model_select
from .copula import CopulaModel, fit_copula, second_moment_matrix
from .marginals import ClassMarginal, anova_f, build_marginals, marginal_stats
from .markov import (
    CountTensor,
    SegmentedChainModel,
    TransitionMatrix,
    estimate_matrix,
    js_distance,
    mobility_metric,
)
from .montecarlo import SimulationConfig, estimate_drift, run_simulation
from .panel import (
    RatingScale,
    align,
    compute_spreads,
    ingest_rates,
    ingest_ratings,
    read_panel_csv,
    write_panel_csv,
)
from .risk import RewardModel, expected_total_spread_path, product_moment_path, total_spread_path

EXIT_OK, EXIT_INPUT, EXIT_COMPUTE = 0, 2, 3


class InputError(Exception):
    """Missing or invalid input; reported with exit code 2."""


@dataclasses.dataclass
class RunConfig:
    ratings: str | None = None
    rates: str | None = None
    scale: str | None = None  # scale.json; the built-in 8-class scale when absent
    agency: str | None = None
    alpha: float = 0.05
    bootstrap_reps: int = 199
    K_max: int = 3
    min_seg: int | None = None
    two_stage: bool = False
    spread_unit: str = "percent"
    mc_draws: int = 10_000  # draws per country pair for copula second moments
    simulation: dict = dataclasses.field(default_factory=dict)
    out: str = "out"
    seed: int = 0
    jobs: int | None = None

    def validate(self):
        if not 0 < self.alpha < 1:
            raise InputError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.bootstrap_reps < 0:
            raise InputError("bootstrap_reps must be >= 0")
        if self.K_max < 0:
            raise InputError("K_max must be >= 0")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise InputError("seed must be an unsigned 64-bit integer")
        if self.spread_unit not in ("percent", "bp"):
            raise InputError("spread_unit must be 'percent' or 'bp'")
        if self.mc_draws < 1:
            raise InputError("mc_draws must be >= 1")
        try:
            self.sim_config()
        except (TypeError, ValueError) as exc:
            raise InputError(f"simulation config: {exc}") from None
        return self

    def sim_config(self):
        opts = dict(self.simulation)
        if "horizon_steps" in opts:
            opts["horizon"] = opts.pop("horizon_steps")
        opts.pop("n_jobs", None)
        opts.pop("seed", None)
        return SimulationConfig(seed=self.seed, n_jobs=self.jobs, **opts)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise InputError("config must be a JSON object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise InputError(f"unknown config keys: {unknown}")
    return RunConfig(**data)


# ---------------------------------------------------------------- file helpers


def _path(cfg, *parts):
    return os.path.join(cfg.out, *parts)


def _write(path, text):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _write_json(path, obj):
    _write(path, json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InputError(f"missing {path}; run the upstream command first") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from None


def _read_text(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except FileNotFoundError:
        raise InputError(f"missing {path}; run the upstream command first") from None


def _num(v):
    """Shortest round-trip text for a float; JSON-safe ``null`` stays out of CSVs."""
    v = float(v)
    return repr(v) if np.isfinite(v) else "nan"


def _jnum(v):
    v = float(v)
    return v if np.isfinite(v) else None


def _csv(header, rows):
    lines = [",".join(header)]
    lines += [",".join(str(x) for x in row) for row in rows]
    return "\n".join(lines) + "\n"


def _matrix_csv(labels, M):
    rows = [[lab] + [_num(v) for v in row] for lab, row in zip(labels, M)]
    return _csv(["country"] + list(labels), rows)


def _load_panels(cfg):
    meta = _read_json(_path(cfg, "panel.json"))
    try:
        ratings = read_panel_csv(_path(cfg, "ratings_panel.csv"), "ranks",
                                 n_states=meta["n_states"], agency=meta["agency"])
        spreads = read_panel_csv(_path(cfg, "spreads_panel.csv"), "spreads", unit=meta["unit"])
    except FileNotFoundError as exc:
        raise InputError(f"missing {exc.filename}; run `ingest` first") from None
    return meta, ratings, spreads


def _load_chain(cfg):
    info = _read_json(_path(cfg, "matrices", "chain.json"))
    mats = []
    for i, (a, b) in enumerate(info["segments"]):
        text = _read_text(_path(cfg, "matrices", f"segment_{i}.csv"))
        mats.append(TransitionMatrix.from_csv(text, a, b))
    return SegmentedChainModel(info["tau_indices"], mats, info["tau_dates"])


def _load_marginals(cfg, n_states):
    out = []
    for r in range(1, n_states + 1):
        lines = _read_text(_path(cfg, "marginals", f"rank_{r}.csv")).strip().splitlines()
        out.append(ClassMarginal(r, np.array([float(x) for x in lines[1:]])))
    return out


# ---------------------------------------------------------------- commands


def cmd_ingest(cfg):
    """Parse ratings and rates, compute spreads and write the aligned panels."""
    for name in ("ratings", "rates"):
        path = getattr(cfg, name)
        if not path:
            raise InputError(f"--{name} is required")
        if not os.path.isfile(path):
            raise InputError(f"{name} file not found: {path}")
    if cfg.scale and not os.path.isfile(cfg.scale):
        raise InputError(f"scale file not found: {cfg.scale}")
    scale = RatingScale.from_json(cfg.scale) if cfg.scale else RatingScale.default()
    ratings = ingest_ratings(cfg.ratings, scale, cfg.agency)
    spreads = compute_spreads(ingest_rates(cfg.rates), cfg.spread_unit)
    ratings, spreads = align(ratings, spreads)
    os.makedirs(cfg.out, exist_ok=True)
    write_panel_csv(ratings, _path(cfg, "ratings_panel.csv"))
    write_panel_csv(spreads, _path(cfg, "spreads_panel.csv"))
    _write_json(_path(cfg, "panel.json"), {
        "agency": ratings.agency,
        "countries": list(ratings.countries),
        "n_states": ratings.n_states,
        "n_dates": int(ratings.dates.size),
        "first_date": str(ratings.dates[0]),
        "last_date": str(ratings.dates[-1]),
        "unit": spreads.unit,
    })


def cmd_changepoint(cfg):
    """Select the number of breaks by BIC and test them with the bootstrap LRT."""
    meta, ratings, _ = _load_panels(cfg)
    D = ratings.n_states
    fit = model_select(ratings, cfg.K_max, cfg.min_seg, n_states=D, two_stage=cfg.two_stage)
    test_taus = fit.taus if fit.k else fit.taus_by_k.get(1)
    lam = crit = pval = None
    if test_taus and cfg.bootstrap_reps:
        test = lrt_test(ratings, test_taus, cfg.alpha, cfg.bootstrap_reps, cfg.seed,
                        min_seg=cfg.min_seg, n_states=D, n_jobs=cfg.jobs)
        lam, crit, pval = test.lam, test.critical_value, test.p_value
    _write_json(_path(cfg, "changepoints.json"), {
        "agency": meta["agency"],
        "k": fit.k,
        "tau_indices": list(fit.taus),
        "tau_dates": [str(ratings.dates[t]) for t in fit.taus],
        "tested_tau_indices": list(test_taus or ()),
        "lambda": lam,
        "critical_value": crit,
        "p_value": pval,
        "alpha": cfg.alpha,
        "bootstrap_reps": cfg.bootstrap_reps,
        "bic_by_k": {str(k): v for k, v in fit.bic_by_k.items()},
        "loglik_by_k": {str(k): v for k, v in fit.loglik_by_k.items()},
        "params_by_k": {str(k): v for k, v in fit.params_by_k.items()},
        "n_dates": int(ratings.dates.size),
        "seed": cfg.seed,
    })


def cmd_estimate(cfg):
    """Per-segment transition matrices, class marginals and the copula."""
    meta, ratings, spreads = _load_panels(cfg)
    cps = _read_json(_path(cfg, "changepoints.json"))
    D = ratings.n_states
    table = CountTensor(ratings, D)
    taus = tuple(cps["tau_indices"])
    bounds = (0,) + taus + (table.n_transitions,)
    mats = [TransitionMatrix(estimate_matrix(table.interval(a, b)), a, b)
            for a, b in zip(bounds, bounds[1:])]
    chain = SegmentedChainModel(taus, mats, tuple(cps["tau_dates"]))
    info = chain.sidecar()
    _write_json(_path(cfg, "matrices", "chain.json"), info)
    for i, m in enumerate(mats):
        _write(_path(cfg, "matrices", f"segment_{i}.csv"), m.to_csv())
        a, b = info["segments"][i]
        _write_json(_path(cfg, "matrices", f"segment_{i}.json"), {
            "segment": i,
            "start": a,
            "end": b,
            "start_date": str(ratings.dates[a]),
            "end_date": str(ratings.dates[b]),
            "transitions": int(table.interval(a, b).sum()),
            "tau_indices": info["tau_indices"],
            "tau_dates": info["tau_dates"],
        })

    marg = build_marginals(ratings, spreads, D, min_samples=0)
    rows = []
    for m in marg:
        st = marginal_stats(m)
        rows.append([st.rank, st.count, _num(st.mean), _num(st.st_dev), _num(st.skewness),
                     _num(st.kurtosis)])
        _write(_path(cfg, "marginals", f"rank_{m.rank}.csv"),
               _csv(["spread"], [[_num(v)] for v in m.samples]))
    _write(_path(cfg, "marginals.csv"), _csv(["rank", "count", "mean", "stdev", "skew", "kurt"], rows))

    cop = fit_copula(spreads, ratings.countries)
    _write(_path(cfg, "copula.csv"), cop.to_csv())
    drift = estimate_drift(spreads)
    _write(_path(cfg, "drift.csv"), _csv(["country", "drift"],
                                        [[c, _num(v)] for c, v in zip(ratings.countries, drift)]))


def cmd_simulate(cfg):
    """Monte Carlo of the dynamic Theil index plus the closed-form spread recursions."""
    meta, ratings, _ = _load_panels(cfg)
    D = ratings.n_states
    chain = _load_chain(cfg)
    marg = _load_marginals(cfg, D)
    cop = CopulaModel.from_csv(_read_text(_path(cfg, "copula.csv")))
    if cop.countries != ratings.countries:
        raise InputError("copula.csv countries do not match the rating panel")
    drift_rows = _read_text(_path(cfg, "drift.csv")).strip().splitlines()[1:]
    drift = np.array([float(r.split(",")[1]) for r in drift_rows])
    sim = cfg.sim_config()
    initial = ratings.ranks[:, -1]
    res = run_simulation(chain, marg, cop, initial, sim, drift=drift)

    H = sim.horizon
    rows = [[int(t), _num(res.mean_dt[t]), _num(res.q05[t]), _num(res.q95[t]),
             _num(res.mean_inter[t]), _num(res.mean_intra[t])] for t in range(H + 1)]
    _write(_path(cfg, "theil_path.csv"), _csv(["t", "mean_DT", "q05", "q95", "inter", "intra"], rows))
    _write(_path(cfg, "totals.csv"), _csv(
        ["country", "mean_total_spread"],
        [[c, _num(v)] for c, v in zip(cop.countries, res.mean_totals[H])]))
    _write(_path(cfg, "correlation_sim.csv"), _matrix_csv(cop.countries, res.correlation))
    _write(_path(cfg, "covariance_sim.csv"), _matrix_csv(cop.countries, res.covariance))

    # Closed-form recursions on the chain that drove the simulation.
    sim_chain = chain.last_segment() if sim.last_segment_only else chain
    means = np.array([m.samples.mean() if m.n else np.nan for m in marg])
    model = RewardModel(sim_chain, means, initial)
    V = total_spread_path(model, H)
    Vtot = expected_total_spread_path(model, H)
    _write(_path(cfg, "total_spread.csv"), _csv(
        ["t"] + [f"V_{j}" for j in range(1, D + 1)] + ["V_total"],
        [[t] + [_num(v) for v in V[t]] + [_num(Vtot[t])] for t in range(H + 1)]))

    t = res.report_step
    N = cop.N
    cov = np.full((N, N), np.nan)
    var = np.diag(res.covariance)
    # one stream per country pair, keyed off the top-level seed
    pair_seed = np.random.SeedSequence([cfg.seed, 0x5EC0])
    children = pair_seed.spawn(N * (N - 1) // 2)
    k = 0
    for a in range(N):
        for b in range(a + 1, N):
            M = second_moment_matrix(cop, a, b, marg, cfg.mc_draws, np.random.default_rng(children[k]))
            k += 1
            E_ab = product_moment_path(model, M, a, b, t)[t]
            cov[a, b] = cov[b, a] = E_ab - V[t, initial[a] - 1] * V[t, initial[b] - 1]
    np.fill_diagonal(cov, var)
    _write(_path(cfg, "covariance.csv"), _matrix_csv(cop.countries, cov))
    _write_json(_path(cfg, "simulation.json"), {
        "horizon": H,
        "iterations": sim.iterations,
        "report_step": t,
        "seed": cfg.seed,
        "batch_size": sim.batch_size,
        "drift_adjustment": sim.drift_adjustment,
        "last_segment_only": sim.last_segment_only,
        "skipped_steps": int(res.skipped.sum()),
        "initial_ranks": [int(r) for r in initial],
    })


def cmd_report(cfg):
    """summary.json (validated against the shipped schema) and SVG line plots."""
    import jsonschema

    meta, ratings, spreads = _load_panels(cfg)
    cps = _read_json(_path(cfg, "changepoints.json"))
    simj = _read_json(_path(cfg, "simulation.json"))
    chain = _load_chain(cfg)
    marg = _load_marginals(cfg, ratings.n_states)
    theil = _read_table(_path(cfg, "theil_path.csv"))
    vpath = _read_table(_path(cfg, "total_spread.csv"))
    totals = _read_text(_path(cfg, "totals.csv")).strip().splitlines()[1:]
    cop = CopulaModel.from_csv(_read_text(_path(cfg, "copula.csv")))

    mats = [m.matrix for m in chain.matrices]
    stats_rows = [marginal_stats(m) for m in marg]
    try:
        F, p = anova_f([m for m in marg if m.n])
    except ValueError:
        F = p = None
    H = simj["horizon"]
    t_rep = simj["report_step"]
    off = cop.R[~np.eye(cop.N, dtype=bool)]
    summary = {
        "version": __version__,
        "seed": cfg.seed,
        "agency": meta["agency"],
        "countries": meta["countries"],
        "n_states": meta["n_states"],
        "n_dates": meta["n_dates"],
        "first_date": meta["first_date"],
        "last_date": meta["last_date"],
        "changepoints": {key: cps[key] for key in
                         ("k", "tau_indices", "tau_dates", "lambda", "critical_value", "p_value",
                          "bic_by_k")},
        "segments": [
            {"start": a, "end": b, "mobility": mobility_metric(P)}
            for (a, b), P in zip(chain.sidecar()["segments"], mats)
        ],
        "js_distance_consecutive": [js_distance(P, Q) for P, Q in zip(mats, mats[1:])],
        "marginals": [
            {"rank": s.rank, "count": s.count, "mean": _jnum(s.mean), "stdev": _jnum(s.st_dev)}
            for s in stats_rows
        ],
        "anova": None if F is None else {"F": _jnum(F), "p_value": _jnum(p)},
        "copula_mean_offdiag": float(off.mean()) if off.size else None,
        "simulation": {
            "horizon": H,
            "iterations": simj["iterations"],
            "report_step": t_rep,
            "mean_DT_start": _jnum(theil["mean_DT"][0]),
            "mean_DT_report": _jnum(theil["mean_DT"][t_rep]),
            "mean_DT_end": _jnum(theil["mean_DT"][H]),
            "inter_end": _jnum(theil["inter"][H]),
            "intra_end": _jnum(theil["intra"][H]),
        },
        "expected_total_spread_end": _jnum(vpath["V_total"][H]),
        "mean_total_spread": {line.split(",")[0]: _jnum(line.split(",")[1]) for line in totals},
    }
    schema = json.loads(resources.files("sovrisk").joinpath("schemas/summary.schema.json")
                        .read_text(encoding="utf-8"))
    jsonschema.validate(summary, schema)
    _write_json(_path(cfg, "summary.json"), summary)

    t = theil["t"]
    _write(_path(cfg, "theil_path.svg"), line_plot_svg(
        t, {"mean DT": theil["mean_DT"], "inter": theil["inter"], "intra": theil["intra"],
            "q05": theil["q05"], "q95": theil["q95"]},
        "Dynamic Theil index", "step", "Theil"))
    Vcols = {k: v for k, v in vpath.items() if k.startswith("V_") and k != "V_total"}
    _write(_path(cfg, "total_spread.svg"), line_plot_svg(
        vpath["t"], Vcols, "Expected cumulative spread by initial rank", "step", "V(t)"))
    _write(_path(cfg, "total_spread_increment.svg"), line_plot_svg(
        vpath["t"][1:], {k: np.diff(v) for k, v in Vcols.items()},
        "Expected spread per step by initial rank", "step", "dV(t)"))


def _read_table(path):
    lines = _read_text(path).strip().splitlines()
    header = lines[0].split(",")
    cols = np.array([[float(x) for x in line.split(",")] for line in lines[1:]]).T
    return dict(zip(header, cols))


# ---------------------------------------------------------------- SVG


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf")


def line_plot_svg(x, series, title="", xlabel="", ylabel="", width=640, height=400):
    """Minimal SVG line chart. NaN points break the line."""
    x = np.asarray(x, dtype=float)
    ys = {k: np.asarray(v, dtype=float) for k, v in series.items()}
    left, right, top, bottom = 70, 130, 40, 50
    pw, ph = width - left - right, height - top - bottom
    finite = np.concatenate([v[np.isfinite(v)] for v in ys.values()] + [np.zeros(0)])
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    x0, x1 = (float(x.min()), float(x.max())) if x.size else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + (hi - v) / (hi - lo) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{_esc(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>']
    for i in range(5):
        yv = lo + (hi - lo) * i / 4
        xv = x0 + (x1 - x0) * i / 4
        out.append(f'<text x="{left - 6}" y="{py(yv) + 4:.1f}" text-anchor="end">{yv:.4g}</text>')
        out.append(f'<text x="{px(xv):.1f}" y="{top + ph + 16}" text-anchor="middle">{xv:.4g}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.1f})">{_esc(ylabel)}</text>')
    for n, (name, y) in enumerate(ys.items()):
        color = _COLORS[n % len(_COLORS)]
        runs, cur = [], []
        for xi, yi in zip(x, y):
            if np.isfinite(yi):
                cur.append(f"{px(xi):.2f},{py(yi):.2f}")
            elif cur:
                runs.append(cur)
                cur = []
        if cur:
            runs.append(cur)
        for run in runs:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                       f'points="{" ".join(run)}"/>')
        ly = top + 14 + 16 * n
        out.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 30}" '
                   f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 34}" y="{ly}">{_esc(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s):
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


# ---------------------------------------------------------------- entry point


COMMANDS = {
    "ingest": cmd_ingest,
    "changepoint": cmd_changepoint,
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def _global_flags(suppress):
    default = argparse.SUPPRESS if suppress else None
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=default, help="JSON file with run settings")
    p.add_argument("--seed", type=int, default=default, help="top-level random seed")
    p.add_argument("--out", default=default, help="output directory")
    p.add_argument("--jobs", type=int, default=default,
                   help="worker processes (results do not depend on it)")
    return p


def build_parser():
    parser = argparse.ArgumentParser(prog="sovrisk", parents=[_global_flags(False)],
                                     description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _global_flags(True)
    for name in list(COMMANDS) + ["run", "fixture"]:
        sp = sub.add_parser(name, parents=[common])
        if name in ("ingest", "run"):
            sp.add_argument("--ratings", default=argparse.SUPPRESS)
            sp.add_argument("--rates", default=argparse.SUPPRESS)
            sp.add_argument("--scale", default=argparse.SUPPRESS)
            sp.add_argument("--agency", default=argparse.SUPPRESS)
        if name in ("changepoint", "run"):
            sp.add_argument("--K-max", dest="K_max", type=int, default=argparse.SUPPRESS)
            sp.add_argument("--alpha", type=float, default=argparse.SUPPRESS)
            sp.add_argument("--bootstrap-reps", dest="bootstrap_reps", type=int,
                            default=argparse.SUPPRESS)
        if name in ("simulate", "run"):
            sp.add_argument("--horizon", type=int, default=argparse.SUPPRESS)
            sp.add_argument("--iterations", type=int, default=argparse.SUPPRESS)
    sub.choices["fixture"].description = "write a synthetic ratings/rates/scale fixture into --out"
    return parser


def _resolve(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    for key in ("seed", "out", "jobs", "ratings", "rates", "scale", "agency", "K_max", "alpha",
                "bootstrap_reps"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    for key in ("horizon", "iterations"):
        val = getattr(args, key, None)
        if val is not None:
            cfg.simulation = {**cfg.simulation, key: val}
    return cfg.validate()


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve(args)
        if args.command == "fixture":
            from .datasets import write_fixture
            write_fixture(cfg.out, seed=cfg.seed)
            return EXIT_OK
        steps = list(COMMANDS) if args.command == "run" else [args.command]
        for step in steps:
            COMMANDS[step](cfg)
    except (InputError, FileNotFoundError, PermissionError) as exc:
        print(f"sovrisk: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        # malformed input surfaces as ValueError (PanelError is one) from parsing,
        # but ingest is the only stage that parses raw user files
        code = EXIT_INPUT if _is_input_stage(args.command, exc) else EXIT_COMPUTE
        print(f"sovrisk: error: {exc}", file=sys.stderr)
        return code
    except Exception as exc:  # noqa: BLE001 - every other failure is a computation error
        print(f"sovrisk: computation failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    return EXIT_OK


def _is_input_stage(command, exc):
    from .panel import PanelError

    return isinstance(exc, PanelError) or command == "ingest"


if __name__ == "__main__":
    sys.exit(main())
