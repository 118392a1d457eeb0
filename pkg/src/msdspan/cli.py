"""Command-line interface: ``msdspan span | character | mc | backtest``.

Exit codes: 0 accept (or success), 3 reject, 1 error, 2 invalid configuration.
Reports are JSON documents that embed the resolved configuration and its
hash; wall-clock timings go to a separate ``timings.json`` so that reports
are byte-identical across reruns and worker counts.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from msdspan import __version__
from msdspan.analytics import BacktestConfig, ols_fit, perf_report, run_backtest
from msdspan.character import CharacterError, character, validate_alpha
from msdspan.core import PanelParseError, PortfolioSetError, SpanningConfig, load_panel, load_portfolio_set
from msdspan.resampling import REJECT, run_spanning_test
from msdspan.simulation import REFERENCE_B_LISTS, GarchSpec, run_size_power, table_rows

EXIT_ACCEPT = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_REJECT = 3
ENV_OUTPUT_DIR = "MSDSPAN_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


@dataclass(frozen=True)
class RunReport:
    command: dict
    config: dict
    result: dict
    version: str = __version__

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "command": self.command,
            "config": self.config,
            "config_hash": self.config_hash,
            "result": self.result,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, obj: dict) -> "RunReport":
        rep = cls(obj["command"], obj["config"], obj["result"], obj["version"])
        if "config_hash" in obj and obj["config_hash"] != rep.config_hash:
            raise ConfigError("report config hash does not match its config block")
        return rep

    @classmethod
    def loads(cls, text: str) -> "RunReport":
        return cls.from_json(json.loads(text))


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _parse_sizes(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.replace(" ", "").split(",") if x)
    except ValueError:
        raise argparse.ArgumentTypeError(f"subsample sizes must be integers, got {text!r}") from None


def _parse_grid(text: str):
    """``sample-values`` or ``fixed:nlo,nhi,nstep,plo,phi,pstep``."""
    if text == "sample-values":
        return ("sample-values", None)
    if text.startswith("fixed:"):
        try:
            x = [float(v) for v in text[6:].split(",")]
        except ValueError:
            x = []
        if len(x) != 6:
            raise argparse.ArgumentTypeError("fixed grid needs six numbers: nlo,nhi,nstep,plo,phi,pstep")
        return ("fixed-grid", (tuple(x[:3]), tuple(x[3:])))
    raise argparse.ArgumentTypeError(f"unknown z-grid {text!r}")


def _prior_config(path) -> dict:
    if path is None:
        return {}
    try:
        rep = RunReport.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"cannot read configuration from {path}: {exc}") from None
    return dict(rep.config)


def _spanning_config(args, base: dict) -> SpanningConfig:
    kw = {k: v for k, v in base.items() if k in SpanningConfig.__dataclass_fields__}
    if args.alpha is not None:
        kw["alpha"] = args.alpha
    if args.subsample_sizes is not None:
        kw["subsample_sizes"] = args.subsample_sizes
    if args.seed is not None:
        kw["rng_seed"] = args.seed
    if args.z_grid is not None:
        kw["z_grid_mode"], kw["fixed_grid"] = args.z_grid
    if args.grid_max_points is not None:
        kw["grid_max_points"] = args.grid_max_points
    if args.grid_policy is not None:
        kw["grid_policy"] = args.grid_policy
    if args.mip_method is not None:
        kw["mip_method"] = args.mip_method
    if args.no_bias_correction:
        kw["bias_correction"] = False
    try:
        return SpanningConfig.from_json(kw, threads=args.threads)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _output_dir(args) -> Path | None:
    out = args.output_dir or os.environ.get(ENV_OUTPUT_DIR)
    if not out:
        return None
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return buf.getvalue()


def _emit(args, report: RunReport, csv_rows: list[dict], timings: dict, extra: dict | None = None) -> None:
    """Write the report (and any extra files) to the output directory, or print it."""
    out = _output_dir(args)
    body = report.dumps() if args.format == "json" else _write_csv(csv_rows)
    name = "report.json" if args.format == "json" else "report.csv"
    if out is None:
        sys.stdout.write(body)
        return
    (out / name).write_text(body, encoding="utf-8")
    if args.format == "csv":
        (out / "report.json").write_text(report.dumps(), encoding="utf-8")
    for fname, text in (extra or {}).items():
        (out / fname).write_text(text, encoding="utf-8")
    (out / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {out / name}", file=sys.stderr)


class _Timer:
    def __init__(self):
        self.stages = {}

    def __call__(self, name):
        timer = self

        class _Stage:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                timer.stages[name] = time.perf_counter() - self.t

        return _Stage()


def cmd_span(args) -> int:
    base = _prior_config(args.config)
    config = _spanning_config(args, base)
    timer = _Timer()
    with timer("load"):
        panel = load_panel(args.returns)
        L = load_portfolio_set(args.l_set)
        K = load_portfolio_set(args.k_set)
    with timer("test"):
        result = run_spanning_test(panel, L, K, config)
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    command = {
        "name": "span",
        "returns": str(args.returns),
        "l_set": str(args.l_set),
        "k_set": str(args.k_set),
        "inputs_sha256": {
            "returns": _file_digest(args.returns),
            "l_set": _file_digest(args.l_set),
            "k_set": _file_digest(args.k_set),
        },
    }
    res = result.to_json()
    res["asset_names"] = list(panel.asset_names)
    report = RunReport(command, config.to_json(), res)
    rows = [{"b": b, "quantile": q} for b, q in result.quantiles]
    rows.append({"b": "corrected", "quantile": result.critical_value})
    rows.append({"b": "xi", "quantile": result.xi})
    _emit(args, report, rows, timer.stages)
    print(
        f"xi_T={result.xi:.6g} critical={result.critical_value:.6g} decision={result.decision}",
        file=sys.stderr,
    )
    return EXIT_REJECT if result.decision == REJECT else EXIT_ACCEPT


def cmd_character(args) -> int:
    base = _prior_config(args.config)
    timer = _Timer()
    with timer("load"):
        M = load_portfolio_set(args.l_set)
        N = load_portfolio_set(args.k_set)
    alpha = args.alpha if args.alpha is not None else float(base.get("alpha", 0.05))
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must lie in (0, 1)")
    with timer("character"):
        rep = character(M, N)
        check = validate_alpha(alpha, rep)
    command = {"name": "character", "l_set": str(args.l_set), "k_set": str(args.k_set)}
    result = rep.to_json()
    result["alpha_check"] = check
    report = RunReport(command, {"alpha": alpha}, result)
    _emit(args, report, [{"character": rep.character, "fraction": str(rep.character_exact), "alpha_bound": rep.alpha_bound}], timer.stages)
    bound = "n/a" if rep.alpha_bound is None else f"{rep.alpha_bound:.6g}"
    print(f"ch={rep.character_exact} ({rep.character:.6g}) alpha bound={bound} alpha check={check}", file=sys.stderr)
    return EXIT_ACCEPT


def _mc_settings(args, base: dict) -> tuple[GarchSpec, int, list[int], SpanningConfig, int, int]:
    try:
        scen = json.loads(Path(args.scenario).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.scenario}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    scen = {**base.get("scenario", {}), **scen}
    try:
        spec = GarchSpec.from_json(scen.get("spec", {"preset": "panel_a"}))
        M = int(scen.get("M", spec.K - 2))
        Ts = scen.get("T", [300])
        Ts = [int(Ts)] if isinstance(Ts, (int, float)) else [int(t) for t in Ts]
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from None
    reps = args.reps if args.reps is not None else int(base.get("reps", scen.get("reps", 100)))
    seed = args.seed if args.seed is not None else int(base.get("seed", scen.get("seed", 0)))
    span_base = dict(base.get("spanning", {}))
    for key in ("alpha", "bias_correction", "subsample_sizes", "grid_max_points"):
        if key in scen:
            span_base[key] = scen[key]
    if reps < 1:
        raise ConfigError("reps must be at least 1")
    return spec, M, Ts, span_base, reps, seed


def cmd_mc(args) -> int:
    base = _prior_config(args.config)
    spec, M, Ts, span_base, reps, seed = _mc_settings(args, base)
    timer = _Timer()
    results, per_T = {}, {}
    configs = {}
    for T in Ts:
        kw = dict(span_base)
        if args.subsample_sizes is None and "subsample_sizes" not in kw:
            if T not in REFERENCE_B_LISTS:
                raise ConfigError(f"no default subsample sizes for T={T}; pass --subsample-sizes")
            kw["subsample_sizes"] = REFERENCE_B_LISTS[T]
        cfg = _spanning_config(args, kw)
        configs[T] = cfg
        with timer(f"T={T}"):
            size, power = run_size_power(spec, M, T, reps, cfg, seed=seed, threads=args.threads)
        label = f"K={spec.K},M={M}"
        results[(label, T, "power")] = power
        results[(label, T, "size")] = size
        per_T[str(T)] = {"size": size.to_json(), "power": power.to_json()}
    first = configs[Ts[0]].to_json()
    config = {
        "scenario": {"spec": spec.to_json(), "M": M, "T": Ts},
        "reps": reps,
        "seed": seed,
        "spanning": {k: v for k, v in first.items() if k != "subsample_sizes"},
        "subsample_sizes": {str(T): list(c.subsample_sizes) for T, c in configs.items()},
    }
    rows = table_rows(results)
    report = RunReport(
        {"name": "mc", "scenario": str(args.scenario)},
        config,
        {"results": per_T, "stationarity": spec.stationarity(), "table": rows},
    )
    _emit(args, report, rows, timer.stages, extra={"table.csv": _write_csv(rows)})
    for r in rows:
        print(f"{r['kind']:5s} T={r['T']}: corrected={r['rate_corrected']} uncorrected={r['rate_uncorrected']}", file=sys.stderr)
    return EXIT_ACCEPT


def _factor_matrix(path, panel, periods):
    fac = load_panel(path)
    names = list(fac.asset_names)
    rf_idx = next((i for i, n in enumerate(names) if n.upper() == "RF"), None)
    if fac.dates is not None and panel.dates is not None:
        pos = {d: i for i, d in enumerate(fac.dates)}
        try:
            rows = [pos[panel.dates[t]] for t in periods]
        except KeyError as exc:
            raise ValueError(f"factor file has no row for date {exc}") from None
    elif fac.T == panel.T:
        rows = list(periods)
    else:
        raise ValueError("factor file must share dates with the returns or have the same number of rows")
    X = fac.values[rows]
    keep = [i for i in range(len(names)) if i != rf_idx]
    rf = X[:, rf_idx] if rf_idx is not None else None
    return X[:, keep], [names[i] for i in keep], rf


def cmd_backtest(args) -> int:
    base = _prior_config(args.config)
    span = _spanning_config(args, base.get("spanning", {}))
    bt_base = base.get("backtest", {})
    try:
        bt = BacktestConfig(
            window=args.window if args.window is not None else bt_base.get("window", 360),
            step=args.step if args.step is not None else bt_base.get("step", 1),
            trc=args.trc if args.trc is not None else bt_base.get("trc", 0.0035),
            benchmark=args.benchmark if args.benchmark is not None else bt_base.get("benchmark"),
            riskfree=args.riskfree if args.riskfree is not None else bt_base.get("riskfree"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    timer = _Timer()
    with timer("load"):
        panel = load_panel(args.returns)
        L = load_portfolio_set(args.l_set)
        K = load_portfolio_set(args.k_set)
    try:
        bt.check(panel.T)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    with timer("backtest"):
        records = run_backtest(panel, L, K, bt, span)
    periods = [r.period for r in records]
    net = np.array([r.net_return for r in records])

    def column(name):
        if name is None:
            return None
        if name not in panel.asset_names:
            raise ConfigError(f"column {name!r} not in the returns file")
        return panel.values[periods, panel.asset_names.index(name)]

    bench, rf = column(bt.benchmark), column(bt.riskfree)
    fit_json = None
    if args.factors:
        X, fnames, frf = _factor_matrix(args.factors, panel, periods)
        rf = rf if rf is not None else frf
        y = net - (rf if rf is not None else 0.0)
        fit = ols_fit(y, np.column_stack([np.ones(len(y)), X]), ["alpha", *fnames])
        fit_json = fit.to_json()
    with timer("metrics"):
        perf = perf_report(net, bench, rf)
        bench_perf = perf_report(bench, None, rf) if bench is not None else None

    rows = []
    for r in records:
        row = {"period": r.period, "date": panel.dates[r.period] if panel.dates else ""}
        row.update({f"w_{n}": float(x) for n, x in zip(panel.asset_names, r.weights)})
        row.update({
            "gross_return": r.gross_return,
            "turnover": r.turnover,
            "net_return": r.net_return,
            "gross_wealth": r.gross_wealth,
            "net_wealth": r.net_wealth,
        })
        rows.append(row)
    result = {
        "periods": len(records),
        "strategy": perf.to_json(),
        "benchmark": None if bench_perf is None else bench_perf.to_json(),
        "cumulative_multiple": {
            "strategy_gross": records[-1].gross_wealth,
            "strategy_net": records[-1].net_wealth,
            "benchmark": None if bench is None else float(np.prod(1 + bench)),
        },
        "factor_fit": fit_json,
    }
    config = {"spanning": span.to_json(), "backtest": bt.to_json()}
    report = RunReport({"name": "backtest", "returns": str(args.returns), "l_set": str(args.l_set), "k_set": str(args.k_set)}, config, result)
    extra = {"weights.csv": _write_csv(rows), "performance.json": json.dumps(result, indent=2, sort_keys=True) + "\n"}
    if fit_json is not None:
        extra["factor_fit.json"] = json.dumps(fit_json, indent=2, sort_keys=True) + "\n"
    _emit(args, report, rows, timer.stages, extra=extra)
    return EXIT_ACCEPT


def _add_shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=None, help="significance level (default 0.05)")
    p.add_argument("--subsample-sizes", type=_parse_sizes, default=None, metavar="B1,B2,...")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1, help="worker processes; results do not depend on it")
    p.add_argument("--z-grid", type=_parse_grid, default=None, metavar="sample-values|fixed:nlo,nhi,nstep,plo,phi,pstep")
    p.add_argument("--grid-max-points", type=int, default=None)
    p.add_argument("--grid-policy", choices=["window", "global"], default=None)
    p.add_argument("--mip-method", choices=["vertex", "bnb"], default=None)
    p.add_argument("--no-bias-correction", action="store_true")
    p.add_argument("--output-dir", default=None, help=f"defaults to ${ENV_OUTPUT_DIR}, else print to stdout")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--config", default=None, help="reuse the configuration embedded in a previous report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msdspan", description="Check whether portfolio set K spans L under Markowitz stochastic dominance")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("span", help="test whether K spans L on a returns panel")
    p.add_argument("returns")
    p.add_argument("l_set")
    p.add_argument("k_set")
    _add_shared(p)
    p.set_defaults(func=cmd_span)

    p = sub.add_parser("character", help="character of K relative to L and the alpha bound")
    p.add_argument("l_set")
    p.add_argument("k_set")
    _add_shared(p)
    p.set_defaults(func=cmd_character)

    p = sub.add_parser("mc", help="size/power Monte Carlo on simulated GARCH panels")
    p.add_argument("scenario", help="scenario JSON")
    p.add_argument("--reps", type=int, default=None)
    _add_shared(p)
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("backtest", help="rolling-window out-of-sample evaluation")
    p.add_argument("returns")
    p.add_argument("l_set")
    p.add_argument("k_set")
    p.add_argument("--factors", default=None, help="factor CSV (optional RF column)")
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--step", type=int, default=None)
    p.add_argument("--trc", type=float, default=None)
    p.add_argument("--benchmark", default=None, help="returns column used as benchmark")
    p.add_argument("--riskfree", default=None, help="returns column used as risk-free rate")
    _add_shared(p)
    p.set_defaults(func=cmd_backtest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, PanelParseError, PortfolioSetError, CharacterError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
