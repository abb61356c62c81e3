"""Parameter sweeps over simulated landscapes, with a resumable CSV store.

A sweep simulates its landscapes once, then runs every (method, parameter
combination, landscape) cell. Every cell derives its seeds from
``(master_seed, method, signature, landscape_id)``, so results do not depend
on the number of worker processes or the order in which cells finish.

Store layout (one directory)::

    config.json        sweep configuration, checked on resume
    raw.csv            one row per fold
    ideal.csv          cross-landscape RMSE values
    failures.csv       cells that could not run (e.g. empty analysis set)
    done.csv           completed task keys; rows of unfinished tasks are discarded
    summary.csv        per parameter combination statistics
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .errors import ConfigError, ParameterError
from .evaluation import (
    PARAM_COLUMNS,
    RunResult,
    TargetRange,
    cross_validate,
    format_param,
    param_signature,
    rmse,
)
from .forest import ForestConfig, fit_forest
from .landscape import GridSpec, Landscape, simulate_landscape
from .resampling import (
    Method,
    block_cv,
    block_layout,
    cluster_cv,
    iter_disc_folds,
    resubstitution,
    vfold,
)
from .rng import derived_seed, substream

log = logging.getLogger(__name__)

BUFFERS = tuple(round(0.03 * k, 2) for k in range(17))
SHORT_BUFFERS = BUFFERS[:11]
RADII = tuple(round(0.03 * k, 2) for k in range(11))
BLOCK_SIZES = (1 / 100, 1 / 64, 1 / 36, 1 / 25, 1 / 16, 1 / 9, 1 / 4, 1 / 2)
CLUSTER_V = (2, 5, 10, 20)
BLOCK_V = (2, 4, 9, 16, 25, 36, 64, 100)

METHOD_ORDER = ("ideal", "resubstitution", "vfold", "blocked", "clustered", "blo3", "lodo")
METHOD_LABELS = {
    "ideal": "Ideal RMSE",
    "resubstitution": "Resubstitution",
    "vfold": "V-fold",
    "blocked": "Blocked",
    "clustered": "Clustered",
    "blo3": "BLO3",
    "lodo": "LODO",
}

# iteration counts reported for the full-size experiment
REFERENCE_ITERATIONS = {
    "resubstitution": 100,
    "vfold": 400,
    "blocked": 8800,
    "clustered": 8800,
    "blo3": 1700,
    "lodo": 11100,
}

RAW_HEADER = (
    "method", *PARAM_COLUMNS, "landscape_id", "fold_id", "rmse", "n_assessment", "n_analysis",
)
SUMMARY_HEADER = ("method", "param_signature", "mean_rmse", "sd_rmse", "pct_in_target", "n_iterations")
FAILURE_HEADER = ("method", "param_signature", "landscape_id", "reason")
IDEAL_HEADER = ("train_landscape", "test_landscape", "rmse")


@dataclass(frozen=True)
class SweepConfig:
    n_landscapes: int = 100
    side_cells: int = 50
    master_seed: int = 0
    n_trees: int = 500
    min_node_size: int = 5
    mtry: int = 2
    resubstitution: bool = True
    ideal: bool = True
    vfold_v: tuple[int, ...] = (2, 5, 10, 20)
    block_sizes: tuple[float, ...] = BLOCK_SIZES
    block_buffers: tuple[float, ...] = SHORT_BUFFERS
    # multi-block folds (fewer folds than blocks), run without a buffer
    block_v: tuple[int, ...] = BLOCK_V
    blocking_methods: tuple[str, ...] = ("random", "continuous", "snake")
    cluster_v: tuple[int, ...] = CLUSTER_V
    cluster_functions: tuple[str, ...] = ("kmeans", "hierarchical")
    cluster_buffers: tuple[float, ...] = SHORT_BUFFERS
    blo3_buffers: tuple[float, ...] = BUFFERS
    lodo_radii: tuple[float, ...] = RADII
    lodo_buffers: tuple[float, ...] = SHORT_BUFFERS
    # evaluate only this many seeded disc folds per landscape (None: all)
    fold_sample: int | None = None

    def __post_init__(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, list):
                object.__setattr__(self, f.name, tuple(value))
        if self.n_landscapes < 0:
            raise ConfigError("n_landscapes must be nonnegative")
        GridSpec(self.side_cells)
        for name in ("block_buffers", "cluster_buffers", "blo3_buffers", "lodo_radii", "lodo_buffers"):
            for d in getattr(self, name):
                if not 0 <= d <= math.sqrt(2):
                    raise ParameterError(f"{name}: distance {d} outside [0, sqrt(2)]")
        for bs in self.block_sizes:
            try:
                block_layout(bs)
            except ParameterError as exc:
                raise ConfigError(str(exc)) from None
        if self.fold_sample is not None and self.fold_sample < 1:
            raise ConfigError("fold_sample must be positive")

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.side_cells)

    def forest_config(self, seed: int = 0) -> ForestConfig:
        return ForestConfig(self.n_trees, self.min_node_size, self.mtry, seed=seed)

    def replace(self, **changes) -> SweepConfig:
        return dataclasses.replace(self, **changes)

    def to_json(self) -> dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}


PROFILES = {
    "full": SweepConfig(),
    "desk": SweepConfig(
        n_landscapes=20,
        side_cells=25,
        n_trees=100,
        vfold_v=(2, 10),
        block_sizes=(1 / 25, 1 / 9),
        block_buffers=(0.0, 0.12, 0.24),
        block_v=(),
        blocking_methods=("continuous",),
        cluster_v=(5, 10),
        cluster_functions=("kmeans", "hierarchical"),
        cluster_buffers=(0.0, 0.15),
        blo3_buffers=(0.0, 0.12, 0.24, 0.36, 0.48),
        lodo_radii=(0.12, 0.24),
        lodo_buffers=(0.12,),
        fold_sample=25,
    ),
}


@dataclass(frozen=True)
class Cell:
    """One method with one parameter combination."""

    method: str
    params: dict = field(default_factory=dict, hash=False)

    @property
    def signature(self) -> str:
        return param_signature(self.params)

    @property
    def key(self) -> str:
        return f"{self.method}|{self.signature}"


def _params(**kw) -> dict:
    return {k: kw.get(k) for k in PARAM_COLUMNS}


def planned_cells(config: SweepConfig) -> list[Cell]:
    cells = []
    if config.resubstitution:
        cells.append(Cell("resubstitution", _params()))
    cells += [Cell("vfold", _params(v=v)) for v in config.vfold_v]
    for bs in config.block_sizes:
        for b in config.block_buffers:
            cells.append(Cell("blocked", _params(block_size=bs, buffer=b)))
    for bs in config.block_sizes:
        n_blocks = math.prod(block_layout(bs))
        for v in config.block_v:
            if v < n_blocks:
                for bm in config.blocking_methods:
                    cells.append(Cell("blocked", _params(block_size=bs, v=v, blocking_method=bm, buffer=0.0)))
    for v in config.cluster_v:
        for fn in config.cluster_functions:
            for b in config.cluster_buffers:
                cells.append(Cell("clustered", _params(v=v, cluster_function=fn, buffer=b)))
    cells += [Cell("blo3", _params(buffer=b)) for b in config.blo3_buffers]
    for r in config.lodo_radii:
        for b in config.lodo_buffers:
            cells.append(Cell("lodo", _params(radius=r, buffer=b)))
    return cells


def iteration_counts(config: SweepConfig) -> dict[str, int]:
    """Planned iterations (parameter combinations x landscapes) per method.

    Blocked cells with fewer folds than blocks are counted under
    ``blocked_multi`` so that the leave-one-block-out count stays comparable
    with the reference figure.
    """
    counts: dict[str, int] = defaultdict(int)
    for cell in planned_cells(config):
        label = cell.method
        if cell.method == "blocked" and cell.params.get("v") is not None:
            label = "blocked_multi"
        counts[label] += config.n_landscapes
    return dict(counts)


def iteration_report(config: SweepConfig) -> list[str]:
    counts = iteration_counts(config)
    lines = []
    for method in METHOD_ORDER[1:]:
        if method not in counts:
            continue
        line = f"{METHOD_LABELS[method]}: {counts[method]}"
        if method == "lodo":
            line += (
                f"  (radius x buffer grid = {len(config.lodo_radii)} x {len(config.lodo_buffers)};"
                f" the reference total of {REFERENCE_ITERATIONS['lodo']} is not a multiple of this grid)"
            )
        lines.append(line)
    if "blocked_multi" in counts:
        lines.append(f"Blocked, several blocks per fold: {counts['blocked_multi']}  (not part of the reference total)")
    return lines


def landscape_seed(config: SweepConfig, i: int) -> int:
    return derived_seed(config.master_seed, "landscape", i)


def simulate_landscapes(config: SweepConfig) -> list[Landscape]:
    return [simulate_landscape(config.grid, landscape_seed(config, i)) for i in range(config.n_landscapes)]


def disc_centers(config: SweepConfig, landscape_id: int, n: int) -> np.ndarray | None:
    """Seeded subset of disc centres shared by every BLO3/LODO cell of a landscape."""
    if config.fold_sample is None or config.fold_sample >= n:
        return None
    rng = substream(config.master_seed, "centers", landscape_id)
    return np.sort(rng.choice(n, size=config.fold_sample, replace=False))


def run_cell(config: SweepConfig, cell: Cell, landscape: Landscape, landscape_id: int) -> list[RunResult]:
    """Build the plan for one cell on one landscape and cross-validate it.

    Raises :class:`ParameterError` when the parameters leave an empty set.
    """
    seed = derived_seed(config.master_seed, cell.method, cell.signature, landscape_id)
    forest = config.forest_config(seed)
    p = cell.params
    coords = landscape.coords
    n = landscape.n
    if cell.method == "resubstitution":
        plan = resubstitution(n)
    elif cell.method == "vfold":
        plan = vfold(n, p["v"], seed)
    elif cell.method == "blocked":
        plan = block_cv(coords, p["block_size"], p.get("v"), p.get("blocking_method") or "continuous", p["buffer"], seed)
    elif cell.method == "clustered":
        plan = cluster_cv(coords, p["v"], p["cluster_function"], p["buffer"], seed)
    elif cell.method in ("blo3", "lodo"):
        centers = disc_centers(config, landscape_id, n)
        folds = list(iter_disc_folds(coords, p.get("radius") or 0.0, p["buffer"], centers))
        return cross_validate(landscape, folds, forest, landscape_id=landscape_id, method=cell.method, params=p)
    else:
        raise ValueError(f"unknown method {cell.method!r}")
    return cross_validate(landscape, plan, forest, landscape_id=landscape_id, method=cell.method, params=p)


def run_ideal(config: SweepConfig, landscapes: list[Landscape], i: int) -> list[tuple[int, int, float]]:
    """Fit on landscape ``i``, score every other landscape."""
    forest_cfg = config.forest_config(derived_seed(config.master_seed, "ideal", i))
    feats = forest_cfg.features
    forest = fit_forest(landscapes[i].features(feats), landscapes[i].y, forest_cfg)
    return [
        (i, j, rmse(other.y, forest.predict(other.features(feats))))
        for j, other in enumerate(landscapes)
        if j != i
    ]


# ---------------------------------------------------------------------------
# result store


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def _raw_row(r: RunResult) -> list[str]:
    return [r.method, *[_fmt(r.params.get(k)) for k in PARAM_COLUMNS], r.landscape_id, r.fold_id,
            _fmt(r.rmse), r.n_assessment, r.n_analysis]


def _parse_param(name: str, text: str):
    if text == "":
        return None
    if name == "v":
        return int(text)
    if name in ("blocking_method", "cluster_function"):
        return text
    return float(text)


def read_raw_csv(path: str | Path) -> list[RunResult]:
    path = Path(path)
    if not path.exists():
        return []
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            params = {k: _parse_param(k, row[k]) for k in PARAM_COLUMNS}
            out.append(
                RunResult(
                    row["method"], params, int(row["landscape_id"]), int(row["fold_id"]),
                    float(row["rmse"]), int(row["n_assessment"]), int(row["n_analysis"]),
                )
            )
    return out


def read_ideal_csv(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        return np.empty(0)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = sorted((int(r["train_landscape"]), int(r["test_landscape"]), float(r["rmse"])) for r in reader)
    return np.array([r[2] for r in rows])


def _method_rank(method: str) -> int:
    return METHOD_ORDER.index(method) if method in METHOD_ORDER else len(METHOD_ORDER)


def _result_sort_key(r: RunResult):
    params = tuple((v is None, v if not isinstance(v, str) else 0, v if isinstance(v, str) else "")
                   for v in (r.params.get(k) for k in PARAM_COLUMNS))
    return (_method_rank(r.method), params, r.landscape_id, r.fold_id)


@dataclass
class ComboSummary:
    method: str
    signature: str
    params: dict
    estimates: np.ndarray  # one CV estimate per landscape, in landscape order
    mean_rmse: float
    sd_rmse: float
    pct_in_target: float | None

    @property
    def n_iterations(self) -> int:
        return int(self.estimates.size)


def _sd(values: np.ndarray) -> float:
    return float(values.std(ddof=1)) if values.size > 1 else 0.0


def summarize(results: Iterable[RunResult], target: TargetRange | None = None) -> list[ComboSummary]:
    """Per parameter combination: mean and sd over landscapes of the mean fold RMSE."""
    by_combo: dict[tuple[str, str], dict[int, list[float]]] = defaultdict(lambda: defaultdict(list))
    params_of: dict[tuple[str, str], dict] = {}
    first: dict[tuple[str, str], RunResult] = {}
    for r in sorted(results, key=_result_sort_key):
        key = (r.method, r.signature)
        by_combo[key][r.landscape_id].append(r.rmse)
        params_of.setdefault(key, dict(r.params))
        first.setdefault(key, r)
    out = []
    for key in sorted(by_combo, key=lambda k: _result_sort_key(first[k])[:2]):
        per_landscape = by_combo[key]
        est = np.array([float(np.mean(per_landscape[i])) for i in sorted(per_landscape)])
        pct = None if target is None else 100.0 * float(target.contains(est).mean())
        out.append(ComboSummary(key[0], key[1], params_of[key], est, float(est.mean()), _sd(est), pct))
    return out


def method_summary(combos: list[ComboSummary], target: TargetRange | None, ideal_values=None) -> list[dict]:
    """Pooled statistics per method across all of its parameter combinations."""
    rows = []
    if ideal_values is not None and len(ideal_values):
        ideal_values = np.asarray(ideal_values)
        pct = None if target is None else 100.0 * float(target.contains(ideal_values).mean())
        rows.append({"method": "ideal", "mean": float(ideal_values.mean()), "sd": _sd(ideal_values),
                     "pct": pct, "n": int(ideal_values.size)})
    pooled: dict[str, list[np.ndarray]] = defaultdict(list)
    for c in combos:
        pooled[c.method].append(c.estimates)
    for method, chunks in pooled.items():
        est = np.concatenate(chunks)
        pct = None if target is None else 100.0 * float(target.contains(est).mean())
        rows.append({"method": method, "mean": float(est.mean()), "sd": _sd(est), "pct": pct, "n": int(est.size)})
    if target is not None:
        rows.sort(key=lambda r: (-r["pct"], _method_rank(r["method"])))
    else:
        rows.sort(key=lambda r: _method_rank(r["method"]))
    return rows


class ResultStore:
    """Directory-backed, append-only store written by a single process."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    raw_path = property(lambda self: self.root / "raw.csv")
    ideal_path = property(lambda self: self.root / "ideal.csv")
    failure_path = property(lambda self: self.root / "failures.csv")
    done_path = property(lambda self: self.root / "done.csv")
    summary_path = property(lambda self: self.root / "summary.csv")
    config_path = property(lambda self: self.root / "config.json")

    def open(self, config: SweepConfig) -> set[str]:
        """Create or resume the store; returns the keys of completed tasks."""
        self.root.mkdir(parents=True, exist_ok=True)
        cfg = config.to_json()
        if self.config_path.exists():
            stored = json.loads(self.config_path.read_text())
            if stored != json.loads(json.dumps(cfg)):
                raise ConfigError(f"{self.root} holds results of a different sweep configuration")
        else:
            self.config_path.write_text(json.dumps(cfg, indent=2, sort_keys=True))
        done = set()
        if self.done_path.exists():
            done = {line.strip() for line in self.done_path.read_text().splitlines()[1:] if line.strip()}
        self._drop_unfinished(done)
        for path, header in (
            (self.raw_path, RAW_HEADER),
            (self.ideal_path, IDEAL_HEADER),
            (self.failure_path, FAILURE_HEADER),
            (self.done_path, ("task",)),
        ):
            if not path.exists():
                with open(path, "w", newline="") as fh:
                    csv.writer(fh).writerow(header)
        return done

    def _drop_unfinished(self, done: set[str]) -> None:
        def keep_raw(row):
            params = {k: _parse_param(k, row[k]) for k in PARAM_COLUMNS}
            return task_key(row["method"], param_signature(params), int(row["landscape_id"])) in done

        def keep_ideal(row):
            return task_key("ideal", "", int(row["train_landscape"])) in done

        def keep_failure(row):
            return task_key(row["method"], row["param_signature"], int(row["landscape_id"])) in done

        for path, header, keep in (
            (self.raw_path, RAW_HEADER, keep_raw),
            (self.ideal_path, IDEAL_HEADER, keep_ideal),
            (self.failure_path, FAILURE_HEADER, keep_failure),
        ):
            if not path.exists():
                continue
            with open(path, newline="") as fh:
                rows = list(csv.DictReader(fh))
            kept = [r for r in rows if keep(r)]
            if len(kept) != len(rows):
                with open(path, "w", newline="") as fh:
                    w = csv.writer(fh)
                    w.writerow(header)
                    for r in kept:
                        w.writerow([r[h] for h in header])

    def record(self, key: str, results=(), ideal=(), failure=None) -> None:
        with open(self.raw_path, "a", newline="") as fh:
            w = csv.writer(fh)
            for r in results:
                w.writerow(_raw_row(r))
        with open(self.ideal_path, "a", newline="") as fh:
            w = csv.writer(fh)
            for i, j, v in ideal:
                w.writerow((i, j, _fmt(v)))
        if failure is not None:
            with open(self.failure_path, "a", newline="") as fh:
                csv.writer(fh).writerow(failure)
        with open(self.done_path, "a", newline="") as fh:
            fh.write(key + "\n")

    def results(self) -> list[RunResult]:
        return read_raw_csv(self.raw_path)

    def ideal_values(self) -> np.ndarray:
        return read_ideal_csv(self.ideal_path)

    def target(self) -> TargetRange | None:
        values = self.ideal_values()
        return TargetRange.from_values(values) if values.size else None

    def finalize(self) -> list[ComboSummary]:
        """Sort raw rows canonically and write summary.csv."""
        results = sorted(self.results(), key=_result_sort_key)
        with open(self.raw_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RAW_HEADER)
            for r in results:
                w.writerow(_raw_row(r))
        ideal = self.ideal_values()
        with open(self.ideal_path, newline="") as fh:
            rows = sorted((int(r["train_landscape"]), int(r["test_landscape"]), r["rmse"]) for r in csv.DictReader(fh))
        with open(self.ideal_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(IDEAL_HEADER)
            w.writerows(rows)
        with open(self.failure_path, newline="") as fh:
            failures = list(csv.DictReader(fh))
        failures.sort(key=lambda r: (_method_rank(r["method"]), r["param_signature"], int(r["landscape_id"])))
        with open(self.failure_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(FAILURE_HEADER)
            w.writerows([r[k] for k in FAILURE_HEADER] for r in failures)
        target = TargetRange.from_values(ideal) if ideal.size else None
        combos = summarize(results, target)
        write_summary_csv(self.summary_path, combos, target, ideal)
        return combos


def write_summary_csv(path, combos: list[ComboSummary], target: TargetRange | None, ideal_values) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_HEADER)
        if len(ideal_values):
            vals = np.asarray(ideal_values)
            pct = 100.0 * float(target.contains(vals).mean())
            w.writerow(("ideal", "", _fmt(float(vals.mean())), _fmt(_sd(vals)), _fmt(pct), vals.size))
        for c in combos:
            w.writerow((c.method, c.signature, _fmt(c.mean_rmse), _fmt(c.sd_rmse),
                        "" if c.pct_in_target is None else _fmt(c.pct_in_target), c.n_iterations))


def read_summary_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def task_key(method: str, signature: str, landscape_id: int) -> str:
    return f"{method}|{signature}|{landscape_id}"


# ---------------------------------------------------------------------------
# execution

_WORKER: dict[str, Any] = {}


def _init_worker(config: SweepConfig, landscapes: list[Landscape] | None = None):
    _WORKER["config"] = config
    _WORKER["landscapes"] = landscapes if landscapes is not None else simulate_landscapes(config)


def _execute(task):
    kind, cell, i = task
    config, landscapes = _WORKER["config"], _WORKER["landscapes"]
    if kind == "ideal":
        return task, run_ideal(config, landscapes, i), None
    try:
        return task, run_cell(config, cell, landscapes[i], i), None
    except ParameterError as exc:
        return task, [], str(exc)


@dataclass
class SweepOutcome:
    store: ResultStore
    combos: list[ComboSummary]
    n_tasks: int
    n_run: int
    n_failed: int


def run_sweep(config: SweepConfig, out_dir: str | Path, jobs: int = 1, landscapes: list[Landscape] | None = None,
              max_tasks: int | None = None) -> SweepOutcome:
    """Run (or resume) every task of ``config``; write the store under ``out_dir``.

    ``max_tasks`` stops after that many new tasks (the store stays resumable).
    """
    store = ResultStore(out_dir)
    done = store.open(config)
    tasks = []
    if config.ideal and config.n_landscapes >= 2:
        tasks += [("ideal", None, i) for i in range(config.n_landscapes)]
    for cell in planned_cells(config):
        tasks += [("cell", cell, i) for i in range(config.n_landscapes)]

    def key_of(task):
        kind, cell, i = task
        return task_key("ideal", "", i) if kind == "ideal" else task_key(cell.method, cell.signature, i)

    pending = [t for t in tasks if key_of(t) not in done]
    if max_tasks is not None:
        pending = pending[:max_tasks]
    n_failed = 0

    def handle(task, payload, failure):
        nonlocal n_failed
        kind, cell, i = task
        if kind == "ideal":
            store.record(key_of(task), ideal=payload)
        elif failure is not None:
            n_failed += 1
            store.record(key_of(task), failure=(cell.method, cell.signature, i, failure))
        else:
            store.record(key_of(task), results=payload)

    if pending:
        if landscapes is None and (jobs <= 1):
            landscapes = simulate_landscapes(config)
        if jobs <= 1:
            _init_worker(config, landscapes)
            for task in pending:
                handle(*_execute(task))
        else:
            with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(config, landscapes)) as pool:
                futures = [pool.submit(_execute, t) for t in pending]
                for fut in as_completed(futures):
                    handle(*fut.result())
    combos = store.finalize()
    return SweepOutcome(store, combos, len(tasks), len(pending), n_failed)


# ---------------------------------------------------------------------------
# reporting


def _block_label(bs) -> str:
    if bs is None:
        return ""
    return str(Fraction(bs).limit_denominator(1000))


def format_method_table(rows: list[dict]) -> str:
    lines = [f"{'Method':<16}{'RMSE':<18}% within target RMSE range"]
    for r in rows:
        rm = f"{r['mean']:.3f} ({r['sd']:.3f})"
        pct = "" if r["pct"] is None else f"{r['pct']:.2f}%"
        lines.append(f"{METHOD_LABELS.get(r['method'], r['method']):<16}{rm:<18}{pct}")
    return "\n".join(lines)


def format_top_table(combos: list[ComboSummary], per_method: int = 3, ideal_mean: float | None = None) -> str:
    lines = [f"{'Method':<16}{'V':>4} {'Cell size':>9} {'Cluster fn':>12} {'Buffer':>7} {'Radius':>7}  "
             f"{'RMSE':<16}% within"]
    grouped: dict[str, list[ComboSummary]] = defaultdict(list)
    for c in combos:
        grouped[c.method].append(c)
    for method in sorted(grouped, key=_method_rank):
        ranked = sorted(
            grouped[method],
            key=lambda c: (-(c.pct_in_target or 0.0),
                           abs(c.mean_rmse - ideal_mean) if ideal_mean is not None else 0.0,
                           c.signature),
        )
        for c in ranked[:per_method]:
            p = c.params
            pct = "" if c.pct_in_target is None else f"{c.pct_in_target:.2f}%"
            lines.append(
                f"{METHOD_LABELS.get(method, method):<16}{format_param(p.get('v')):>4} "
                f"{_block_label(p.get('block_size')):>9} {format_param(p.get('cluster_function')):>12} "
                f"{format_param(p.get('buffer')):>7} {format_param(p.get('radius')):>7}  "
                f"{c.mean_rmse:.3f} ({c.sd_rmse:.3f})  {pct}"
            )
    return "\n".join(lines)
