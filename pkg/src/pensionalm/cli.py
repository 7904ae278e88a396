"""Command-line interface.

Every subcommand reads one YAML run configuration; ``--seed``,
``--scenarios``, ``--horizon`` and ``--threads`` override the matching
scalar fields.  Exit codes: 0 success, 2 configuration error, 3 invalid
input data, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, ukmodel
from .almsim import DEFAULT_QUANTILES, AllocationPolicy, simulate_fund_from_channels, summarize
from .assets import PortfolioSpec, RecoveryModel, default_portfolios
from .calibration import (
    SparsityPattern,
    estimate_A,
    estimate_sigma,
    forecasts_by_index,
    long_run_offset,
    median_trajectory,
)
from .errors import ConfigError, MisalignedSeries, PensionALMError
from .io import (
    RunManifest,
    ScenarioFileWriter,
    file_digest,
    load_config,
    read_cohorts_csv,
    read_factor_history,
    read_model_json,
    read_mortality_factors,
    read_pattern_csv,
    read_scenarios,
    read_views,
    write_model_json,
    write_mortality_factors,
    write_quantile_table,
    write_report,
    write_scenarios,
)
from .liabilities import AdjustmentFunction
from .mortality import MortalityBasis, fit_all_years
from .scenarios import Cohort, PipelineConfig, decompose, generate
from .transforms import RawSeries, apply_all, common_years, read_series_csv
from .varmodel import VarModel, stationarity_report

logger = logging.getLogger("pensionalm")

SCENARIO_FILE = "scenarios.alms"


# -- configuration helpers --------------------------------------------------------------


def _basis(cfg) -> MortalityBasis:
    sec = cfg.section("mortality")
    return MortalityBasis(tuple(sec.get("knots", (18, 65, 105))), sec.get("min_age"), sec.get("max_age"))


def _portfolios(cfg) -> list[PortfolioSpec]:
    items = cfg.raw.get("portfolios")
    if not items:
        return default_portfolios(ukmodel.RECOVERY)
    out = []
    for item in items:
        item = dict(item)
        rec = item.pop("recovery", None)
        try:
            out.append(PortfolioSpec(recovery=RecoveryModel(**rec) if rec else None, **item))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"portfolio {item}: {exc}") from None
    return out


def _adjustment(cfg) -> AdjustmentFunction:
    spec = cfg.section("liabilities").get("adjustment", "uss_like")
    if spec == "uss_like":
        return AdjustmentFunction.uss_like()
    if spec == "full":
        return AdjustmentFunction.full()
    if not isinstance(spec, dict) or "pairs" not in spec:
        raise ConfigError("liabilities.adjustment must be 'uss_like', 'full' or a mapping with 'pairs'")
    try:
        return AdjustmentFunction.from_pairs(spec["pairs"], bool(spec.get("floor_at_zero", False)), spec.get("cap"))
    except ValueError as exc:
        raise ConfigError(f"liabilities.adjustment: {exc}") from None


def _cohorts(cfg) -> list[Cohort]:
    out = []
    for item in cfg.section("liabilities").get("cohorts", []) or []:
        try:
            out.append(Cohort(float(item["age"]), str(item["gender"]), int(item["count"]), float(item.get("benefit", 1.0))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"liabilities.cohorts entry {item}: {exc}") from None
    return out


def _model(cfg, horizon: int) -> tuple[VarModel, np.ndarray]:
    sec = cfg.section("model")
    source = sec.get("source", "published")
    if source == "published":
        names = ukmodel.FACTOR_NAMES
        A = ukmodel.autoregression_matrix()
        sigma = ukmodel.covariance_matrix()
        ns = ukmodel.nonstationary_indices()
        x0 = ukmodel.initial_state()
    elif source == "calibrated":
        fitted, x0 = read_model_json(cfg.path("model", "fit"))
        names, A, sigma, ns = fitted.factor_names, fitted.A, fitted.sigma, fitted.nonstationary
    else:
        raise ConfigError(f"model.source must be 'published' or 'calibrated', got {source!r}")
    x0 = np.array(x0, dtype=float)
    for k, v in (sec.get("x0") or {}).items():
        if k not in names:
            raise ConfigError(f"model.x0: unknown factor {k!r}")
        x0[list(names).index(k)] = float(v)
    views_path = cfg.path("model", "views", required=source != "published")
    if views_path is not None:
        views = read_views(views_path)
    else:
        views = ukmodel.default_views(x0, link_awe=bool(sec.get("link_awe", False)))
    a = long_run_offset(A, names, ns, views)
    _, offsets = median_trajectory(x0, A, a, horizon, forecasts_by_index(views, names))
    sigma = np.asarray(sigma) * float(sec.get("sigma_scale", 1.0))
    return VarModel(A, offsets, sigma, names, ns), x0


def _pipeline(cfg) -> PipelineConfig:
    horizon = int(cfg.simulation("horizon", 70))
    model, x0 = _model(cfg, horizon)
    return PipelineConfig(
        model,
        x0,
        horizon,
        portfolios=_portfolios(cfg),
        cohorts=_cohorts(cfg),
        adjustment=_adjustment(cfg),
        basis=_basis(cfg),
    )


def _out(cfg, *parts) -> Path:
    p = cfg.output_dir.joinpath(*parts)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _manifest(cfg, command, timings, inputs, outputs) -> Path:
    man = RunManifest(
        command,
        cfg.digest(),
        __version__,
        timings,
        {str(p): file_digest(p) for p in inputs if p is not None},
        {str(p.name): file_digest(p) for p in outputs},
    )
    path = _out(cfg, f"manifest_{command.replace('-', '_')}.json")
    man.write(path)
    return path


# -- commands --------------------------------------------------------------------------------


def cmd_fit_mortality(cfg) -> int:
    t0 = time.perf_counter()
    src = cfg.path("data", "cohorts")
    table = read_cohorts_csv(src)
    factors = fit_all_years(table, _basis(cfg))
    out = _out(cfg, "mortality_factors.csv")
    write_mortality_factors(out, factors)
    logger.info("fitted %d (year, gender) groups -> %s", len(factors.values), out)
    _manifest(cfg, "fit-mortality", {"total": time.perf_counter() - t0}, [cfg.source, src], [out])
    return 0


def _history(cfg):
    data = cfg.section("data")
    inputs = []
    if data.get("factors"):
        p = cfg.path("data", "factors")
        inputs.append(p)
        years, names, X = read_factor_history(p)
        return years, names, X, inputs
    series = data.get("series")
    if not series:
        raise ConfigError("calibration needs data.factors or data.series")
    raw = {}
    for sid, rel in series.items():
        p = Path(rel) if Path(rel).is_absolute() else cfg.base_dir / rel
        if not p.exists():
            raise ConfigError(f"data.series.{sid}: file {p} does not exist")
        inputs.append(p)
        raw[sid] = read_series_csv(p, sid)
    specs = {k: v for k, v in ukmodel.transform_specs().items() if all(i in raw for i in v.inputs)}
    factors = apply_all(specs, raw)
    mort_path = cfg.path("data", "mortality_factors", required=False)
    if mort_path is not None:
        inputs.append(mort_path)
        mf = read_mortality_factors(mort_path)
        for g in ("m", "f"):
            yrs, V = mf.series(g)
            for i in range(V.shape[1] if yrs.size else 0):
                factors[f"v{i + 1}_{g}"] = RawSeries(f"v{i + 1}_{g}", yrs, V[:, i])
    names = tuple(nm for nm in ukmodel.FACTOR_NAMES if nm in factors) + tuple(
        nm for nm in factors if nm not in ukmodel.FACTOR_NAMES
    )
    years = common_years([factors[nm] for nm in names])
    if years.size == 0:
        raise MisalignedSeries("factor series share no common years")
    X = np.column_stack([factors[nm].at(years) for nm in names])
    return years, names, X, inputs


def cmd_calibrate(cfg) -> int:
    t0 = time.perf_counter()
    years, names, X, inputs = _history(cfg)
    sec = cfg.section("calibration")
    pattern_path = cfg.path("calibration", "pattern", required=False)
    if pattern_path is not None:
        inputs.append(pattern_path)
        pattern = read_pattern_csv(pattern_path, names)
    elif sec.get("pattern") is None and sec.get("dense"):
        pattern = SparsityPattern.dense(len(names))
    else:
        raise ConfigError("calibration.pattern is required (or set calibration.dense: true)")
    report = estimate_A(X, pattern, names, years)
    window = sec.get("window_start")
    report.sigma = estimate_sigma(report.residuals, report.years, window)
    report.window_start = window
    eig = stationarity_report(report.A, factor_names=names)
    ns_names = sec.get("nonstationary")
    if ns_names is None:
        ns = tuple(names.index(nm) for nm in eig.unit_root_factors)
    else:
        unknown = [nm for nm in ns_names if nm not in names]
        if unknown:
            raise ConfigError(f"calibration.nonstationary: unknown factors {unknown}")
        ns = tuple(names.index(nm) for nm in ns_names)
    outdir = _out(cfg, "calibration", "x").parent
    paths = list(write_report(outdir, report).values())
    eig_path = outdir / "eigenvalues.txt"
    eig_path.write_text(eig.summary() + "\n")
    fit_path = outdir / "model_fit.json"
    model = VarModel(report.A, np.zeros(len(names)), report.sigma.cov, names, ns)
    write_model_json(fit_path, model, X[-1])
    paths += [eig_path, fit_path]
    _manifest(cfg, "calibrate", {"total": time.perf_counter() - t0}, [cfg.source] + inputs, paths)
    return 0


def _model_inputs(cfg) -> list:
    return [cfg.path("model", "fit", required=False), cfg.path("model", "views", required=False)]


def cmd_simulate(cfg) -> int:
    t0 = time.perf_counter()
    pipe = _pipeline(cfg)
    n = int(cfg.simulation("scenarios", 1000))
    threads = int(cfg.simulation("threads", 1))
    seed = cfg.seed
    t_setup = time.perf_counter() - t0
    out = _out(cfg, SCENARIO_FILE)
    with ScenarioFileWriter(out, seed, pipe.model.factor_names, n, pipe.horizon, pipe.channel_widths()) as w:
        _, times = generate(pipe, n, seed, threads, sink=w)
    timings = {"setup": t_setup, **{f"simulate_{k}": v for k, v in times.as_dict().items()}}
    timings["total"] = time.perf_counter() - t0
    logger.info(
        "%d scenarios x %d years: factors %.2fs, returns %.2fs, total %.2fs",
        n, pipe.horizon, times.factors, times.returns, timings["total"],
    )
    _manifest(cfg, "simulate", timings, [cfg.source] + _model_inputs(cfg), [out])
    return 0


def _policy(cfg) -> AllocationPolicy:
    sec = cfg.section("alm")
    if "allocation" in sec:
        try:
            return AllocationPolicy.normalized({str(k): float(v) for k, v in sec["allocation"].items()})
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"alm.allocation: {exc}") from None
    year = int(sec.get("allocation_year", 2019))
    if year not in ukmodel.ALLOCATIONS:
        raise ConfigError(f"alm.allocation_year must be one of {sorted(ukmodel.ALLOCATIONS)}")
    return AllocationPolicy.normalized(ukmodel.allocation_weights(year))


def _scenario_path(cfg, section: str) -> Path:
    p = cfg.path(section, "scenarios", required=False)
    if p is None:
        p = cfg.output_dir / SCENARIO_FILE
        if not p.exists():
            raise ConfigError(f"no scenario file at {p}; run 'simulate' first or set {section}.scenarios")
    return p


def cmd_alm(cfg) -> int:
    t0 = time.perf_counter()
    sec = cfg.section("alm")
    src = _scenario_path(cfg, "alm")
    scen = read_scenarios(src)
    horizon = int(sec.get("horizon", ukmodel.ALM_HORIZON))
    horizon = min(horizon, scen.horizon)
    channels = {}
    for k, v in scen.channels.items():
        width = v.shape[1]
        channels[k] = v[:, : horizon + 1] if width == scen.horizon + 1 else v[:, :horizon]
    policy = _policy(cfg)
    W = simulate_fund_from_channels(
        float(sec.get("initial_wealth", ukmodel.INITIAL_WEALTH)), policy, channels, float(sec.get("borrow_spread", 0.0))
    )
    qs = tuple(sec.get("quantiles", DEFAULT_QUANTILES))
    summary = summarize(W, qs)
    start = int(cfg.simulation("start_year", 0))
    table = _out(cfg, "wealth_quantiles.csv")
    summary.write_csv(table, start)
    doc = {
        "weights": policy.weights,
        "horizon": horizon,
        "deficit_probability": summary.deficit_probability,
        "terminal_quantiles": {f"{q:g}": float(v) for q, v in zip(qs, summary.table[-1])},
    }
    js = _out(cfg, "alm_summary.json")
    js.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    print(f"P(terminal wealth < 0) = {summary.deficit_probability:.4f}")
    _manifest(cfg, "alm", {"total": time.perf_counter() - t0}, [cfg.source, src], [table, js])
    return 0


def cmd_freeze(cfg, groups=None) -> int:
    t0 = time.perf_counter()
    groups = list(groups or cfg.section("freeze").get("groups", []))
    src = _scenario_path(cfg, "freeze")
    scen = read_scenarios(src)
    pipe = _pipeline(cfg)
    if pipe.horizon != scen.horizon:
        raise ConfigError(f"config horizon {pipe.horizon} differs from scenario horizon {scen.horizon}")
    threads = int(cfg.simulation("threads", 1))
    frozen = decompose(scen, pipe, groups, threads)
    tag = "_".join(sorted(groups)) or "none"
    out = _out(cfg, f"scenarios_frozen_{tag}.alms")
    write_scenarios(out, frozen)
    _manifest(cfg, "freeze", {"total": time.perf_counter() - t0}, [cfg.source, src], [out])
    return 0


def cmd_report(cfg) -> int:
    t0 = time.perf_counter()
    sec = cfg.section("report")
    src = _scenario_path(cfg, "report")
    scen = read_scenarios(src, mmap=True)
    qs = tuple(sec.get("quantiles", DEFAULT_QUANTILES))
    start = int(cfg.simulation("start_year", 0))
    outdir = _out(cfg, "report", "x").parent
    outputs = []
    for k, nm in enumerate(scen.factor_names):
        table = np.quantile(np.asarray(scen.data[:, :, k]), qs, axis=0, method="midpoint").T
        p = outdir / f"factor_{nm}.csv"
        write_quantile_table(p, np.arange(scen.horizon + 1) + start, table, qs)
        outputs.append(p)
    for nm, arr in scen.channels.items():
        arr = np.asarray(arr)
        first = 0 if arr.shape[1] == scen.horizon + 1 else 1
        table = np.quantile(arr, qs, axis=0, method="midpoint").T
        p = outdir / f"channel_{nm.replace(':', '_')}.csv"
        write_quantile_table(p, np.arange(arr.shape[1]) + first + start, table, qs)
        outputs.append(p)
    _manifest(cfg, "report", {"total": time.perf_counter() - t0}, [cfg.source, src], outputs)
    return 0


COMMANDS = {
    "fit-mortality": cmd_fit_mortality,
    "calibrate": cmd_calibrate,
    "simulate": cmd_simulate,
    "alm": cmd_alm,
    "freeze": cmd_freeze,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pensionalm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="YAML run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--scenarios", type=int)
        p.add_argument("--horizon", type=int)
        p.add_argument("--threads", type=int)
        if name == "freeze":
            p.add_argument("--groups", nargs="*", help="risk groups to freeze (indexation, longevity)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(
            args.config,
            {"seed": args.seed, "scenarios": args.scenarios, "horizon": args.horizon, "threads": args.threads},
        )
        if args.command == "freeze":
            return cmd_freeze(cfg, args.groups)
        return COMMANDS[args.command](cfg)
    except PensionALMError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
