"""Command-line entry point.

Every scenario key lives in an INI file (``--config``) under a section and can
be overridden by the flag ``--section.key``. Outputs go under ``--out-dir``
together with ``manifest.json`` listing each file's SHA-256.

Exit codes: 0 success, 1 compliance below ``--require-compliance``,
2 bad input or failed fit, 3 infeasible SLO.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .compensator import CompensatorError, build_training_set, compensate_series, train
from .estimator import EstimatorError, InfeasibleSLOError, SloSpec, builtin_catalog, load_catalog, select_flavor
from .forecaster import ForecastError, RollingForecaster, ape95, load_holidays, tune
from .profiler import (ExecutionProfile, ProfilingError, SetupTimes, build_profile, generate_samples,
                       load_samples, write_samples)
from .provisioner import ProvisionerConfig, setup_horizon
from .scenarios import SHAPES, default_distributions
from .simulator import SimulationConfig, VerticalPolicy, plan_forecasts, plot_svg, run, sweep_flavors, write_sweep
from .svgplot import line_chart
from .trace import TraceError, generate_synthetic, load_trace, split, write_trace

logger = logging.getLogger("servescale")

EXIT_OK, EXIT_COMPLIANCE, EXIT_INPUT, EXIT_INFEASIBLE = 0, 1, 2, 3

# section -> key -> (type, default, help)
SCHEMA: dict[str, dict[str, tuple[type, object, str]]] = {
    "paths": {
        "trace": (str, "", "workload CSV (timestamp,count)"),
        "samples": (str, "", "latency samples CSV (cores,latency_seconds)"),
        "profile": (str, "", "execution profile JSON (overrides samples)"),
        "catalog": (str, "", "flavor catalog CSV; empty = built-in EC2 t3 catalog"),
        "holidays": (str, "", "holiday CSV (date[,window_days])"),
    },
    "slo": {
        "lambda_s": (float, 2.0, "latency bound in seconds"),
        "percentile": (float, 0.95, "latency percentile bounded by the SLO"),
        "min_mem_gb": (float, 2.0, "minimum VM memory"),
    },
    "setup_times_s": {
        "vm": (float, 90.0, "VM deployment time"),
        "cd": (float, 30.0, "container download time"),
        "ml": (float, 10.0, "model load time"),
        "mu": (float, 0.0, "model unload time"),
    },
    "provisioner": {
        "tau_vm_s": (float, 3600.0, "VM lease period"),
        "t_forecast_s": (float, 5.0, "forecast computation time budgeted in the horizon"),
        "recall": (str, "all", "parked-VM recall on deploy: all | partial"),
        "accounting": (str, "fleet", "delta rule: fleet | incremental"),
        "aggregate": (str, "max", "forecast used per tick: max | point"),
        "prewarm": (str, "auto", "VMs serving at the start: auto | none | <count>"),
    },
    "forecaster": {
        "period": (float, 1440.0, "seasonal period in intervals"),
        "order": (int, 10, "Fourier order N"),
        "window": (int, 2880, "training window W in intervals"),
        "retrain_every": (int, 1, "refit the forecaster every k intervals"),
        "order_grid": (str, "10,15,20,25,30", "tuning grid for N"),
        "window_grid": (str, "", "tuning grid for W (default 2P,3P,4P)"),
        "validation": (int, 0, "tuning validation length (default one period)"),
    },
    "compensator": {
        "kind": (str, "boosted_trees", "identity | linear | boosted_trees"),
        "rows": (int, 3000, "training rows"),
        "n_rounds": (int, 200, "boosting rounds"),
        "max_depth": (int, 3, "tree depth"),
        "learning_rate": (float, 0.1, "shrinkage"),
        "residual": (bool, True, "boost from the raw forecast"),
    },
    "vertical": {
        "enabled": (bool, False, "reactive vertical core scaling"),
        "margin": (float, 0.7, "release a core when p95 < margin * lambda"),
        "interference": (float, 1.2, "service-time factor with co-located batch jobs"),
    },
    "simulation": {
        "start": (int, -1, "first simulated interval (-1: first test interval)"),
        "end": (int, -1, "end interval, exclusive (-1: end of trace)"),
        "seed": (int, 0, "service-time sampling seed"),
    },
}

PATH_KEYS = {("paths", k) for k in SCHEMA["paths"]}


class ConfigError(ValueError):
    pass


def _parse(kind, raw, where):
    if kind is bool:
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{where}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected {kind.__name__}, got {raw!r}") from None


class Scenario:
    """Resolved configuration: defaults, then the INI file, then flags."""

    def __init__(self, values: dict, explicit: set):
        self.values = values
        self.explicit = explicit

    def __getitem__(self, key: str):
        section, name = key.split(".")
        return self.values[section][name]

    def is_set(self, key: str) -> bool:
        return key in self.explicit

    @classmethod
    def resolve(cls, config_path: str | None, flags: dict) -> "Scenario":
        values = {s: {k: d for k, (_, d, _) in keys.items()} for s, keys in SCHEMA.items()}
        explicit = set()
        if config_path:
            path = Path(config_path)
            if not path.is_file():
                raise ConfigError(f"config file {path} not found")
            parser = configparser.ConfigParser()
            parser.read(path)
            for section in parser.sections():
                if section not in SCHEMA:
                    raise ConfigError(f"{path}: unknown section [{section}]")
                for name, raw in parser.items(section):
                    if name not in SCHEMA[section]:
                        raise ConfigError(f"{path}: unknown key {section}.{name}")
                    kind = SCHEMA[section][name][0]
                    value = _parse(kind, raw, f"{path}: {section}.{name}")
                    if (section, name) in PATH_KEYS and value:
                        value = str((path.parent / value).resolve())
                    values[section][name] = value
                    explicit.add(f"{section}.{name}")
        for key, raw in flags.items():
            if raw is None:
                continue
            section, name = key.split(".")
            values[section][name] = _parse(SCHEMA[section][name][0], raw, f"--{key}")
            explicit.add(key)
        scenario = cls(values, explicit)
        scenario.validate()
        return scenario

    def validate(self) -> None:
        v = self.values
        for key in ("trace", "samples", "profile", "catalog", "holidays"):
            p = v["paths"][key]
            if p and not Path(p).is_file():
                raise ConfigError(f"paths.{key}: {p} does not exist")
        checks = [
            (v["slo"]["lambda_s"] > 0, "slo.lambda_s must be > 0"),
            (0 < v["slo"]["percentile"] < 1, "slo.percentile must lie in (0, 1)"),
            (v["slo"]["min_mem_gb"] >= 0, "slo.min_mem_gb must be >= 0"),
            (all(x >= 0 for x in v["setup_times_s"].values()), "setup times must be >= 0"),
            (v["provisioner"]["tau_vm_s"] > 0, "provisioner.tau_vm_s must be > 0"),
            (v["provisioner"]["t_forecast_s"] >= 0, "provisioner.t_forecast_s must be >= 0"),
            (v["provisioner"]["recall"] in ("all", "partial"), "provisioner.recall: all | partial"),
            (v["provisioner"]["accounting"] in ("fleet", "incremental"),
             "provisioner.accounting: fleet | incremental"),
            (v["provisioner"]["aggregate"] in ("max", "point"), "provisioner.aggregate: max | point"),
            (v["forecaster"]["period"] > 0, "forecaster.period must be > 0"),
            (v["forecaster"]["order"] >= 1, "forecaster.order must be >= 1"),
            (v["forecaster"]["order"] <= v["forecaster"]["period"] / 2, "forecaster.order must be <= period/2"),
            (v["forecaster"]["window"] >= 2 * v["forecaster"]["order"] + 2, "forecaster.window too short"),
            (v["forecaster"]["retrain_every"] >= 1, "forecaster.retrain_every must be >= 1"),
            (v["compensator"]["kind"] in ("identity", "linear", "boosted_trees"),
             "compensator.kind: identity | linear | boosted_trees"),
            (v["compensator"]["rows"] >= 1, "compensator.rows must be >= 1"),
            (0 < v["vertical"]["margin"] <= 1, "vertical.margin must lie in (0, 1]"),
            (v["vertical"]["interference"] >= 1, "vertical.interference must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        prewarm = v["provisioner"]["prewarm"]
        if prewarm not in ("auto", "none") and not prewarm.isdigit():
            raise ConfigError("provisioner.prewarm: auto | none | <count>")

    # -- derived objects ----------------------------------------------------

    def slo(self) -> SloSpec:
        return SloSpec(self["slo.lambda_s"], self["slo.percentile"], self["slo.min_mem_gb"])

    def setup_times(self, fallback: SetupTimes | None = None) -> SetupTimes:
        fields = []
        for k in ("vm", "cd", "ml", "mu"):
            key = f"setup_times_s.{k}"
            if fallback is not None and not self.is_set(key):
                fields.append(getattr(fallback, k))
            else:
                fields.append(self[key])
        return SetupTimes(*fields)

    def catalog(self):
        path = self["paths.catalog"]
        return load_catalog(path) if path else builtin_catalog()

    def holidays(self):
        path = self["paths.holidays"]
        return load_holidays(path) if path else ()

    def profile(self) -> ExecutionProfile:
        if self["paths.profile"]:
            prof = ExecutionProfile.load(self["paths.profile"])
        elif self["paths.samples"]:
            prof = build_profile(load_samples(self["paths.samples"]), q=self["slo.percentile"],
                                 min_mem=self["slo.min_mem_gb"])
        else:
            raise ConfigError("simulation needs paths.profile or paths.samples")
        return replace(prof, setup_times=self.setup_times(prof.setup_times))

    def trace(self):
        if not self["paths.trace"]:
            raise ConfigError("paths.trace is required")
        return load_trace(self["paths.trace"])

    def hyperparams(self) -> dict:
        return {k: self[f"compensator.{k}"] for k in ("n_rounds", "max_depth", "learning_rate", "residual")}

    def grids(self):
        P = self["forecaster.period"]
        orders = [int(x) for x in self["forecaster.order_grid"].split(",") if x.strip()]
        raw = self["forecaster.window_grid"]
        windows = [int(x) for x in raw.split(",") if x.strip()] if raw else [int(2 * P), int(3 * P), int(4 * P)]
        return orders, windows


# -- pipeline pieces shared by forecast and simulate ---------------------------------


def _horizon(sc: Scenario, setup: SetupTimes) -> int:
    return setup_horizon(setup, sc["provisioner.t_forecast_s"], 60)


def _layout(sc: Scenario, n: int, h: int):
    """``(forecaster, compensator training range, test start)``."""
    rf = RollingForecaster(h, sc["forecaster.window"], sc["forecaster.period"], sc["forecaster.order"],
                           tuple(sc.holidays()), sc["forecaster.retrain_every"])
    first = rf.first_target
    if sc["compensator.kind"] == "identity":
        train_range = range(first, first)
    else:
        train_range = range(first, first + sc["compensator.rows"] + h + 5)
    test_start = train_range.stop
    if test_start >= n:
        raise ConfigError(f"trace of {n} intervals leaves no test segment after {test_start}")
    return rf, train_range, test_start


def _train_compensator(sc: Scenario, trace, rf, train_range):
    if sc["compensator.kind"] == "identity":
        return None
    ds = build_training_set(trace, rf, train_range)
    return train(ds, sc["compensator.kind"], sc.hyperparams())


def _manifest(out_dir: Path) -> Path:
    files = sorted(p for p in out_dir.rglob("*") if p.is_file() and p.name != "manifest.json")
    entries = [{"path": str(p.relative_to(out_dir)), "sha256": hashlib.sha256(p.read_bytes()).hexdigest()}
               for p in files]
    path = out_dir / "manifest.json"
    path.write_text(json.dumps({"files": entries}, indent=1) + "\n")
    return path


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


# -- commands -------------------------------------------------------------------------


def cmd_gen_trace(args, sc: Scenario, out: Path) -> int:
    spec = SHAPES[args.shape](length=args.length, seed=args.seed)
    trace = generate_synthetic(spec)
    path = out / args.out
    write_trace(trace, path)
    print(f"wrote {len(trace)} intervals ({trace.total} requests) to {path}")
    return EXIT_OK


def cmd_gen_samples(args, sc: Scenario, out: Path) -> int:
    samples = generate_samples(default_distributions(), args.n, args.seed)
    path = out / args.out
    write_samples(samples, path)
    print(f"wrote {args.n} samples for core counts {sorted(samples)} to {path}")
    return EXIT_OK


def cmd_profile(args, sc: Scenario, out: Path) -> int:
    samples_path = args.samples or sc["paths.samples"]
    if not samples_path:
        raise ConfigError("profile needs --samples or paths.samples")
    q = args.percentile if args.percentile is not None else sc["slo.percentile"]
    min_mem = args.min_mem if args.min_mem is not None else sc["slo.min_mem_gb"]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        profile = build_profile(load_samples(samples_path), service=args.service, q=q, min_mem=min_mem,
                                setup_times=sc.setup_times())
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    path = out / args.out
    profile.save(path)
    print(f"{'cores':>5}  {'family':<12} {'D_n':>10}  t_p@{q:g} (s)")
    for entry in profile.per_core.values():
        print(f"{entry.cores:>5}  {entry.fitted.family:<12} {entry.fitted.ks_statistic:>10.6f}  {entry.t_p:.6f}")
    print(f"wrote {path}")
    return EXIT_OK


def _cumulative_ape(actual, series: dict[str, np.ndarray], path: Path) -> None:
    mask = actual > 0
    apes = {k: 100.0 * np.abs(v[mask] - actual[mask]) / actual[mask] for k, v in series.items()}
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ape_percent", *[f"fraction_{k}" for k in series]])
        for thr in range(0, 101):
            w.writerow([thr, *[repr(float(np.mean(a <= thr))) if len(a) else "" for a in apes.values()]])


def cmd_forecast(args, sc: Scenario, out: Path) -> int:
    trace = sc.trace()
    holidays = sc.holidays()
    if args.tune:
        orders, windows = sc.grids()
        validation = sc["forecaster.validation"] or int(sc["forecaster.period"])
        window = split(trace, max(windows), validation, 0)
        result = tune(window, orders, windows, sc["forecaster.period"], holidays)
        with (out / "tune_grid.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["N", "W", "ape95", "error"])
            for N, W, score, err in result.cells:
                w.writerow([N, W, "" if score is None else repr(score), err])
        print(f"tuning: {len(result.cells)} cells, best N={result.N} W={result.W} APE95={result.score:.4f}")
        sc.values["forecaster"]["order"] = result.N
        sc.values["forecaster"]["window"] = result.W

    setup = sc.setup_times()
    h = _horizon(sc, setup)
    rf, train_range, test_start = _layout(sc, len(trace), h)
    end = sc["simulation.end"] if sc["simulation.end"] > 0 else len(trace)
    start = max(test_start, sc["simulation.start"])
    if start >= end:
        raise ConfigError(f"empty test segment [{start}, {end})")
    model = _train_compensator(sc, trace, rf, train_range)
    lag = h + 1
    lo = max(rf.first_target, start - lag - 4)
    targets = range(lo, end)
    y, low, upp = rf.forecasts(trace, targets)
    actual_all = trace.values[lo:end]
    if model is None:
        comp, flags = y.copy(), np.zeros(len(y), dtype=bool)
    else:
        comp, flags = compensate_series(model, actual_all, y, low, upp, lag)
    k = start - lo
    actual, y, low, upp, comp, flags = (a[k:] for a in (actual_all, y, low, upp, comp, flags))

    with (out / "forecasts.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval", "actual", "y", "y_low", "y_upp", "y_compensated", "compensated"])
        for i in range(len(actual)):
            w.writerow([start + i, int(actual[i]), repr(float(y[i])), repr(float(low[i])), repr(float(upp[i])),
                        repr(float(comp[i])), int(flags[i])])
    mae_raw = float(np.mean(np.abs(y - actual)))
    mae_comp = float(np.mean(np.abs(comp - actual)))
    metrics = {
        "intervals": [start, end],
        "horizon": h,
        "N": sc["forecaster.order"],
        "W": sc["forecaster.window"],
        "mae_raw": mae_raw,
        "mae_compensated": mae_comp,
        "ape95_raw": ape95(actual, y),
        "ape95_compensated": ape95(actual, comp),
        "mae_improvement": (1.0 - mae_comp / mae_raw) if mae_raw > 0 else 0.0,
        "compensator": None if model is None else {"kind": model.kind, **model.training_report},
    }
    _dump(out / "forecast_metrics.json", metrics)
    _cumulative_ape(actual, {"raw": y, "compensated": comp}, out / "cumulative_ape.csv")
    if model is not None:
        model.save(out / "compensator.json")
    line_chart([("requests per interval", [("actual", actual, "black"), ("forecast", y, "red"),
                                           ("compensated", comp, "green")])], out / "forecast.svg")
    print(f"test intervals [{start}, {end}): MAE raw {mae_raw:.3f}, compensated {mae_comp:.3f}; "
          f"APE95 raw {metrics['ape95_raw']:.4f}, compensated {metrics['ape95_compensated']:.4f}")
    return EXIT_OK


def cmd_simulate(args, sc: Scenario, out: Path) -> int:
    trace = sc.trace()
    profile = sc.profile()
    catalog = sc.catalog()
    slo = sc.slo()
    select_flavor(catalog, profile, slo)  # raises InfeasibleSLOError before any heavy work
    h = _horizon(sc, profile.setup_times)
    pcfg = ProvisionerConfig(h, sc["provisioner.tau_vm_s"], 60.0, 60, sc["provisioner.recall"],
                             sc["provisioner.accounting"])
    prewarm = sc["provisioner.prewarm"]
    prewarm = None if prewarm == "none" else ("auto" if prewarm == "auto" else int(prewarm))
    vertical = VerticalPolicy(sc["vertical.enabled"], sc["vertical.margin"], sc["vertical.interference"])
    end = sc["simulation.end"] if sc["simulation.end"] > 0 else len(trace)

    model = None
    if args.oracle_forecast:
        start = max(0, sc["simulation.start"])
        plan = None
    else:
        rf, train_range, test_start = _layout(sc, len(trace), h)
        start = max(test_start, sc["simulation.start"])
        model = _train_compensator(sc, trace, rf, train_range)
        if model is not None:
            model.save(out / "compensator.json")
    if start >= end:
        raise ConfigError(f"empty simulation range [{start}, {end})")
    if not args.oracle_forecast:
        plan = plan_forecasts(trace, start, end, h, rf, model)

    config = SimulationConfig(pcfg, start, end, vertical, prewarm, sc["provisioner.aggregate"])
    seed = sc["simulation.seed"]
    report = run(trace, profile, catalog, slo, config, plan, seed)
    report.meta["forecast"] = "oracle" if args.oracle_forecast else (model.kind if model else "raw")
    report.write(out)
    plot_svg(report, out / "simulation.svg")
    s = report.summary()
    print(f"intervals [{start}, {end}) flavor {s['flavor']} (n_req {s['n_req']}): "
          f"{s['requests']} requests, SLO compliance {s['slo_compliance']:.4%}, cost {s['total_cost']:.4f}, "
          f"{s['deployments']} deployments")

    if args.sweep_flavors:
        rows = sweep_flavors(trace, profile, catalog, slo, config, plan, seed)
        write_sweep(rows, out / "flavor_costs.csv")
        greedy = next(r for r in rows if r.greedy)
        print(f"{'flavor':<14} {'n_req':>5} {'cost':>10} {'compliance':>10}  saving vs flavor")
        for r in rows:
            saving = 1.0 - greedy.total_cost / r.total_cost if r.total_cost > 0 else 0.0
            mark = "*" if r.greedy else " "
            print(f"{r.flavor:<13}{mark} {r.n_req:>5} {r.total_cost:>10.4f} {r.slo_compliance:>10.4%}  {saving:.1%}")

    if args.require_compliance is not None and report.slo_compliance < args.require_compliance:
        print(f"compliance {report.slo_compliance:.4%} below required {args.require_compliance:.4%}",
              file=sys.stderr)
        return EXIT_COMPLIANCE
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------------


def _scenario_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("scenario keys (override the config file)")
    for section, keys in SCHEMA.items():
        for name, (kind, default, help_) in keys.items():
            group.add_argument(f"--{section}.{name}", dest=f"cfg:{section}.{name}", default=None,
                               metavar=kind.__name__.upper(), help=f"{help_} (default {default!r})")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI scenario file")
    common.add_argument("--out-dir", default=".", help="directory for all outputs")
    common.add_argument("-v", "--verbose", action="store_true")
    _scenario_flags(common)

    parser = argparse.ArgumentParser(prog="servescale", description="Predictive SLO-aware autoscaling for model serving.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-trace", parents=[common], help="write a synthetic workload trace")
    p.add_argument("--shape", choices=sorted(SHAPES), default="diurnal")
    p.add_argument("--length", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", default="trace.csv")
    p.set_defaults(func=cmd_gen_trace)

    p = sub.add_parser("gen-samples", parents=[common], help="write synthetic latency samples")
    p.add_argument("--n", type=int, default=2000, help="samples per core count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="samples.csv")
    p.set_defaults(func=cmd_gen_samples)

    p = sub.add_parser("profile", parents=[common], help="fit latency distributions per core count")
    p.add_argument("--samples")
    p.add_argument("--min-mem", type=float)
    p.add_argument("--percentile", type=float)
    p.add_argument("--service", default="service")
    p.add_argument("--out", default="profile.json")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("forecast", parents=[common], help="rolling forecasts with and without compensation")
    p.add_argument("--tune", action="store_true", help="grid-search (N, W) first")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("simulate", parents=[common], help="replay the trace against the autoscaled cluster")
    p.add_argument("--oracle-forecast", action="store_true", help="provision from the true future load")
    p.add_argument("--sweep-flavors", action="store_true", help="also simulate every feasible flavor")
    p.add_argument("--require-compliance", type=float, help="exit 1 below this SLO compliance")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg:")}
    try:
        rc = getattr(args, "require_compliance", None)
        if rc is not None and not 0 <= rc <= 1:
            raise ConfigError("--require-compliance must lie in [0, 1]")
        sc = Scenario.resolve(args.config, flags)
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        code = args.func(args, sc, out)
        _manifest(out)
        return code
    except InfeasibleSLOError as exc:
        print("error: no flavor can meet the SLO", file=sys.stderr)
        for name, reason in exc.reasons.items():
            print(f"  {name}: {reason}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ProfilingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for detail in getattr(exc, "iterations", ()) or ():
            print(f"  {detail}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigError, TraceError, ForecastError, CompensatorError, EstimatorError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
