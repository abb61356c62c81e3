"""Command-line front end.

Commands::

    spatialcv simulate  --out DIR                      landscapes + seed manifest
    spatialcv resample  LANDSCAPE --method M --out F   resampling plan CSV
    spatialcv evaluate  LANDSCAPE --plan F --out DIR   per-fold RMSE (and/or --variogram)
    spatialcv sweep     --out DIR                      resumable parameter sweep
    spatialcv report    DIR [--top N]                  method and top-N tables

Settings are resolved in order: profile defaults, then the ``--config`` file
(flat ``key = value`` lines, ``#`` comments), then command-line flags.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ConfigError, EstimationError, ParameterError, SchemaError
from .evaluation import cross_validate
from .landscape import read_landscape_csv, simulate_landscape, write_landscape_csv
from .resampling import (
    Method,
    block_cv,
    buffered_vfold,
    cluster_cv,
    read_plan_csv,
    resubstitution,
    vfold,
    write_plan_csv,
)
from .sweep import (
    PROFILES,
    RAW_HEADER,
    ResultStore,
    SweepConfig,
    _raw_row,
    format_method_table,
    format_top_table,
    iteration_report,
    landscape_seed,
    method_summary,
    read_ideal_csv,
    read_raw_csv,
    run_sweep,
    summarize,
)
from .variogram import empirical_variogram, fit_variogram_model, write_fit_csv, write_variogram_csv

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_PARAMETER = 3
EXIT_IO = 4
EXIT_SKIPPED = 5

log = logging.getLogger("spatialcv")

_INT = ("n_landscapes", "side_cells", "master_seed", "n_trees", "min_node_size", "mtry", "jobs", "v", "landscape_id")
_OPT_INT = ("fold_sample",)
_BOOL = ("resubstitution", "ideal")
_INT_LIST = ("vfold_v", "block_v", "cluster_v")
_FLOAT_LIST = ("block_sizes", "block_buffers", "cluster_buffers", "blo3_buffers", "lodo_radii", "lodo_buffers")
_STR_LIST = ("blocking_methods", "cluster_functions")
_DISTANCE = ("buffer", "radius")
_FRACTION = ("block_size",)
_STR = ("profile", "method", "blocking_method", "cluster_function", "out")
SWEEP_KEYS = tuple(f.name for f in dataclasses.fields(SweepConfig))
KNOWN_KEYS = frozenset(SWEEP_KEYS + _INT + _DISTANCE + _FRACTION + _STR + ("seed",))


def _number(text: str) -> float:
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"not a number: {text!r}") from None


def _distance(key: str, value: float) -> float:
    if not (math.isfinite(value) and 0 <= value <= math.sqrt(2)):
        raise ParameterError(f"{key}={value:g} is outside [0, sqrt(2)]")
    return value


def parse_value(key: str, text: str):
    """Convert one config value to its typed form; raises :class:`ConfigError`."""
    text = text.strip()
    try:
        if key in _INT or key == "seed":
            return int(text)
        if key in _OPT_INT:
            return None if text.lower() in ("", "none") else int(text)
        if key in _BOOL:
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ConfigError(f"{key}: expected a boolean, got {text!r}")
            return text.lower() in ("true", "1", "yes")
        items = [t for t in (s.strip() for s in text.split(",")) if t]
        if key in _INT_LIST:
            return tuple(int(t) for t in items)
        if key in _FLOAT_LIST:
            vals = tuple(_number(t) for t in items)
        elif key in _STR_LIST:
            return tuple(items)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None
    if key in _FLOAT_LIST:
        if key != "block_sizes":
            for x in vals:
                _distance(key, x)
        return vals
    if key in _DISTANCE:
        return _distance(key, _number(text))
    if key in _FRACTION:
        return _number(text)
    if key in _STR:
        return text
    raise ConfigError(f"unknown config key {key!r}")


def read_config_file(path: str | Path) -> dict:
    """Parse ``key = value`` lines; unknown keys and duplicates are errors."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    out = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = parse_value(key, value)
    if "seed" in out:
        out["master_seed"] = out.pop("seed")
    return out


def resolve_settings(args) -> dict:
    settings = read_config_file(args.config) if args.config else {}
    for key, value in vars(args).items():
        if key in ("command", "config", "func") or value is None:
            continue
        settings[key] = value
    if "seed" in settings:
        settings["master_seed"] = settings.pop("seed")
    profile = settings.get("profile", "full")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    settings["profile"] = profile
    for key in _DISTANCE:
        if settings.get(key) is not None:
            _distance(key, settings[key])
    return settings


def sweep_config(settings: dict) -> SweepConfig:
    base = PROFILES[settings["profile"]]
    changes = {k: settings[k] for k in SWEEP_KEYS if k in settings}
    try:
        return base.replace(**changes)
    except (ParameterError, ConfigError):
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def _out(settings, default=None) -> Path:
    out = settings.get("out", default)
    if out is None:
        raise ConfigError("--out is required")
    return Path(out)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(settings: dict) -> int:
    cfg = sweep_config(settings)
    out = _out(settings)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("landscape_id", "seed", "side_cells", "file"))
        for i in range(cfg.n_landscapes):
            seed = landscape_seed(cfg, i)
            name = f"landscape_{i:03d}.csv"
            write_landscape_csv(simulate_landscape(cfg.grid, seed), out / name)
            w.writerow((i, seed, cfg.side_cells, name))
    print(f"wrote {cfg.n_landscapes} landscapes to {out}")
    return EXIT_OK


def build_plan(coords, settings: dict):
    method = settings.get("method")
    if method is None:
        raise ConfigError("--method is required")
    try:
        method = Method(method)
    except ValueError:
        raise ConfigError(f"unknown method {method!r}; choose from {[m.value for m in Method]}") from None
    seed = settings.get("master_seed", 0)
    buffer = settings.get("buffer", 0.0)

    def need(key):
        if settings.get(key) is None:
            raise ConfigError(f"method {method.value} needs --{key.replace('_', '-')}")
        return settings[key]

    n = len(coords)
    if method is Method.RESUBSTITUTION:
        return resubstitution(n)
    if method is Method.VFOLD:
        return vfold(n, need("v"), seed)
    if method is Method.BLOCKED:
        return block_cv(coords, need("block_size"), settings.get("v"),
                        settings.get("blocking_method") or "random", buffer, seed)
    if method is Method.CLUSTERED:
        return cluster_cv(coords, need("v"), settings.get("cluster_function") or "kmeans", buffer, seed)
    if method is Method.BLO3:
        return buffered_vfold(coords, 0.0, buffer)
    return buffered_vfold(coords, need("radius"), buffer)


def cmd_resample(settings: dict) -> int:
    landscape = read_landscape_csv(settings["landscape"])
    plan = build_plan(landscape.coords, settings)
    out = _out(settings)
    write_plan_csv(plan, out)
    print(f"wrote {len(plan)} folds ({plan.method.value}) to {out}")
    return EXIT_OK


def cmd_evaluate(settings: dict) -> int:
    landscape = read_landscape_csv(settings["landscape"])
    out = _out(settings)
    if not settings.get("plan") and not settings.get("variogram"):
        raise ConfigError("evaluate needs --plan and/or --variogram")
    out.mkdir(parents=True, exist_ok=True)
    cfg = sweep_config(settings)
    if settings.get("plan"):
        plan = read_plan_csv(settings["plan"])
        if plan.n != landscape.n:
            raise SchemaError(f"plan covers {plan.n} cells but the landscape has {landscape.n}")
        results = cross_validate(landscape, plan, cfg.forest_config(cfg.master_seed),
                                 landscape_id=settings.get("landscape_id", 0))
        with open(out / "results.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RAW_HEADER)
            for r in results:
                w.writerow(_raw_row(r))
        mean = float(np.mean([r.rmse for r in results]))
        print(f"{plan.method.value}: {len(results)} folds, mean RMSE {mean:.4f}")
    if settings.get("variogram"):
        ev = empirical_variogram(landscape.coords, landscape.y)
        fit = fit_variogram_model(ev)
        write_variogram_csv(ev, out / "variogram.csv")
        write_fit_csv(fit, out / "variogram_fit.csv")
        flag = " (near-nugget)" if fit.near_nugget else ""
        print(f"variogram of y: {fit.model_family.value}, effective range {fit.effective_range:.4f}{flag}")
    return EXIT_OK


def cmd_sweep(settings: dict) -> int:
    cfg = sweep_config(settings)
    for line in iteration_report(cfg):
        print(line)
    if settings.get("dry_run"):
        return EXIT_OK
    out = _out(settings)
    outcome = run_sweep(cfg, out, jobs=settings.get("jobs", 1))
    print(f"{outcome.n_run} of {outcome.n_tasks} tasks run this time; results in {out}")
    if outcome.n_failed or _count_failures(outcome.store):
        print(f"warning: {_count_failures(outcome.store)} cells skipped, see {outcome.store.failure_path}",
              file=sys.stderr)
        return EXIT_SKIPPED
    return EXIT_OK


def _count_failures(store: ResultStore) -> int:
    with open(store.failure_path, newline="") as fh:
        return max(sum(1 for _ in fh) - 1, 0)


def cmd_report(settings: dict) -> int:
    root = Path(settings["results"])
    if not root.is_dir():
        raise FileNotFoundError(f"no result store at {root}")
    results = read_raw_csv(root / "raw.csv")
    ideal = read_ideal_csv(root / "ideal.csv")
    if not results and not ideal.size:
        print("no results")
        return EXIT_OK
    from .evaluation import TargetRange

    target = TargetRange.from_values(ideal) if ideal.size else None
    if target is None:
        print("warning: no ideal RMSE values; reporting RMSE columns only", file=sys.stderr)
    else:
        print(f"target RMSE range [{target.p05:.3f}, {target.p95:.3f}] from {target.source_values} values")
    combos = summarize(results, target)
    print(format_method_table(method_summary(combos, target, ideal)))
    top = settings.get("top", 0)
    if top and combos:
        print()
        print(format_top_table(combos, top, target.mean if target else None))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _fraction_arg(text: str) -> float:
    try:
        return _number(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", metavar="PATH", help="flat key = value settings file")
    shared.add_argument("--seed", type=int, help="master seed")
    shared.add_argument("--jobs", type=int, help="worker processes")
    shared.add_argument("--profile", choices=sorted(PROFILES), help="named sweep profile")
    shared.add_argument("--out", metavar="PATH", help="output file or directory")
    shared.add_argument("--landscapes", dest="n_landscapes", type=int, help="number of landscapes")
    shared.add_argument("--side-cells", dest="side_cells", type=int, help="grid side length in cells")
    shared.add_argument("--trees", dest="n_trees", type=int, help="trees per forest")
    shared.add_argument("-v", "--verbose", action="store_true", help="log progress")

    parser = argparse.ArgumentParser(prog="spatialcv", description="Spatial cross-validation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[shared], help="simulate landscapes")

    p = sub.add_parser("resample", parents=[shared], help="build a resampling plan for a landscape")
    p.add_argument("landscape", help="landscape CSV")
    p.add_argument("--method", choices=[m.value for m in Method])
    p.add_argument("--v", dest="v", type=int, help="number of folds")
    p.add_argument("--block-size", dest="block_size", type=_fraction_arg, help="block area, e.g. 1/9")
    p.add_argument("--blocking-method", dest="blocking_method", choices=["random", "continuous", "snake"])
    p.add_argument("--cluster-function", dest="cluster_function", choices=["kmeans", "hierarchical"])
    p.add_argument("--buffer", type=_fraction_arg)
    p.add_argument("--radius", type=_fraction_arg)

    p = sub.add_parser("evaluate", parents=[shared], help="score a plan or estimate the range of y")
    p.add_argument("landscape", help="landscape CSV")
    p.add_argument("--plan", help="plan CSV from 'resample'")
    p.add_argument("--landscape-id", dest="landscape_id", type=int)
    p.add_argument("--variogram", action="store_true", default=None, help="fit a variogram to y")

    p = sub.add_parser("sweep", parents=[shared], help="run or resume a parameter sweep")
    p.add_argument("--dry-run", dest="dry_run", action="store_true", default=None,
                   help="print planned iteration counts and exit")

    p = sub.add_parser("report", parents=[shared], help="summarize a sweep result store")
    p.add_argument("results", help="sweep output directory")
    p.add_argument("--top", type=int, default=3, help="best combinations per method (0 to skip)")
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "resample": cmd_resample,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    verbose = args.verbose
    del args.verbose
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")
    try:
        settings = resolve_settings(args)
        return COMMANDS[args.command](settings)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParameterError, EstimationError) as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return EXIT_PARAMETER
    except (OSError, SchemaError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
