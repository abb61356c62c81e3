"""Simulated landscapes: spatially structured predictors and a piecewise target.

A landscape is a square grid of cells on the unit square. Eight predictors are
Gaussian random fields; five more are cell-wise combinations of those. The
target ``y`` is built from a subset of the predictors with a limiting ratio and
a percentile-based exclusion rule.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.spatial.distance import cdist

from .errors import SchemaError, SimulationError
from .rng import derived_seed, substream

JITTER = 1e-10

PREDICTOR_NAMES = tuple(f"X{i}" for i in range(1, 14))
RAW_FIELD_NAMES = ("X1", "X2", "X3", "X6", "X7", "X8", "X9", "X10")
MODEL_FEATURES = ("X2", "X3", "X6", "X7", "X8", "X9", "X10")
CSV_HEADER = ("cell_id", "row", "col", "cx", "cy", *PREDICTOR_NAMES, "y")


@dataclass(frozen=True)
class GridSpec:
    """``side_cells`` x ``side_cells`` cells tiling the unit square.

    Cell ``id = row * side_cells + col``; its center is
    ``((col + 0.5) / side, (row + 0.5) / side)``.
    """

    side_cells: int = 50

    def __post_init__(self):
        if int(self.side_cells) != self.side_cells or self.side_cells < 1:
            raise ValueError(f"side_cells must be a positive integer, got {self.side_cells!r}")

    @property
    def n_cells(self) -> int:
        return self.side_cells * self.side_cells

    @property
    def spacing(self) -> float:
        return 1.0 / self.side_cells

    @property
    def rows(self) -> np.ndarray:
        return np.repeat(np.arange(self.side_cells), self.side_cells)

    @property
    def cols(self) -> np.ndarray:
        return np.tile(np.arange(self.side_cells), self.side_cells)

    @property
    def coords(self) -> np.ndarray:
        """(n_cells, 2) array of cell-center ``(cx, cy)``."""
        return _grid_coords(self.side_cells)


@lru_cache(maxsize=8)
def _grid_coords(side: int) -> np.ndarray:
    idx = np.arange(side * side)
    xy = np.column_stack(((idx % side + 0.5) / side, (idx // side + 0.5) / side))
    xy.setflags(write=False)
    return xy


class CovarianceFamily(str, enum.Enum):
    EXPONENTIAL = "exponential"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class CovarianceSpec:
    family: CovarianceFamily
    variance: float
    scale: float

    def __post_init__(self):
        object.__setattr__(self, "family", CovarianceFamily(self.family))
        if self.variance < 0:
            raise ValueError("covariance variance must be nonnegative")
        if self.scale <= 0:
            raise ValueError("covariance scale must be positive")

    def __call__(self, h):
        h = np.asarray(h, dtype=float)
        if self.family is CovarianceFamily.EXPONENTIAL:
            return self.variance * np.exp(-h / self.scale)
        return self.variance * np.exp(-((h / self.scale) ** 2))


def _exp(variance, scale):
    return CovarianceSpec(CovarianceFamily.EXPONENTIAL, variance, scale)


def _gau(variance, scale):
    return CovarianceSpec(CovarianceFamily.GAUSSIAN, variance, scale)


# covariance models of the eight sampled predictors
RAW_FIELD_COVARIANCES: dict[str, CovarianceSpec] = {
    "X1": _exp(0.1, 0.1),
    "X2": _exp(0.3, 0.1),
    "X3": _gau(0.1, 0.3),
    "X6": _exp(0.1, 0.1),
    "X7": _exp(0.1, 0.1),
    "X8": _exp(0.1, 0.1),
    "X9": _gau(0.1, 0.3),
    "X10": _gau(0.1, 0.3),
}


@lru_cache(maxsize=8)
def _cholesky_factor(side: int, cov: CovarianceSpec) -> np.ndarray:
    xy = _grid_coords(side)
    c = cov(cdist(xy, xy))
    c[np.diag_indices_from(c)] += JITTER
    try:
        lower = np.linalg.cholesky(c)
    except np.linalg.LinAlgError as exc:
        raise SimulationError(
            f"covariance {cov} on a {side}x{side} grid is not positive definite "
            f"after adding jitter {JITTER:g}"
        ) from exc
    lower.setflags(write=False)
    return lower


def sample_gaussian_field(grid: GridSpec, cov: CovarianceSpec, seed: int) -> np.ndarray:
    """One zero-mean realization of a stationary isotropic Gaussian field.

    Sampled exactly as ``L @ z`` with ``L`` the Cholesky factor of the dense
    cell-to-cell covariance matrix and ``z`` standard normal draws from ``seed``.
    """
    if cov.variance == 0:
        return np.zeros(grid.n_cells)
    lower = _cholesky_factor(grid.side_cells, cov)
    z = substream(seed).standard_normal(grid.n_cells)
    return lower @ z


def derive_predictors(raw_fields: Mapping[str, np.ndarray], grid: GridSpec) -> dict[str, np.ndarray]:
    """Complete X1..X13 from the eight sampled fields."""
    missing = [name for name in RAW_FIELD_NAMES if name not in raw_fields]
    if missing:
        raise SimulationError(f"missing raw fields: {missing}")
    out = {name: np.asarray(raw_fields[name], dtype=float) for name in RAW_FIELD_NAMES}
    for name, values in out.items():
        if values.shape != (grid.n_cells,):
            raise SimulationError(f"{name} has shape {values.shape}, expected ({grid.n_cells},)")

    x1, x2, x3 = out["X1"], out["X2"], out["X3"]
    zero = np.flatnonzero(x3 == 0)
    if zero.size:
        cell = int(zero[0])
        raise SimulationError(
            f"X3 is exactly zero at cell {cell} (row {cell // grid.side_cells}, "
            f"col {cell % grid.side_cells}); X2/X3 is undefined"
        )
    ratio = x2 / x3
    cutoff = np.percentile(ratio, 95)
    out["X4"] = np.where(ratio > cutoff, 0.0, 1.0)
    out["X5"] = x1 + x2 + x3 + x2 * x3
    out["X11"] = ratio
    norm = 1.0 / math.sqrt(2.0 * math.pi)
    out["X12"] = norm * np.exp(-(x3**2) / 4.0)
    out["X13"] = norm * np.exp(-(x2**2) / 4.0)
    return {name: out[name] for name in PREDICTOR_NAMES}


class TargetRule(str, enum.Enum):
    """How the exclusion branch of the target is resolved.

    ``LITERAL``: cells with ``X4 != 0`` take the grid minimum of the base sum;
    the remaining cells are capped at ``X11``.

    ``TABLE``: cells with ``X4 == 0`` take the grid minimum of the capped
    values; all other cells are capped at ``X11``.
    """

    LITERAL = "literal"
    TABLE = "table"


def exclusion_mask(predictors: Mapping[str, np.ndarray], rule: TargetRule | str = TargetRule.LITERAL) -> np.ndarray:
    x4 = np.asarray(predictors["X4"])
    if TargetRule(rule) is TargetRule.LITERAL:
        return x4 != 0
    return x4 == 0


def compute_target(predictors: Mapping[str, np.ndarray], rule: TargetRule | str = TargetRule.LITERAL) -> np.ndarray:
    """Base sum, capped at X11, with excluded cells set to the grid minimum."""
    rule = TargetRule(rule)
    p = predictors
    base = p["X1"] + p["X5"] + p["X6"] + p["X12"] + p["X13"]
    capped = np.where(base >= p["X11"], p["X11"], base)
    excluded = exclusion_mask(p, rule)
    floor = base.min() if rule is TargetRule.LITERAL else capped.min()
    return np.where(excluded, floor, capped)


@dataclass(frozen=True, eq=False)
class Landscape:
    grid: GridSpec
    fields: Mapping[str, np.ndarray]
    y: np.ndarray
    seed: int | None = None
    rule: TargetRule = field(default=TargetRule.LITERAL)

    def __post_init__(self):
        fields = {}
        for name in PREDICTOR_NAMES:
            if name not in self.fields:
                raise SchemaError(f"landscape is missing {name}")
            arr = np.array(self.fields[name], dtype=float)
            if arr.shape != (self.grid.n_cells,):
                raise SchemaError(f"{name} has {arr.size} entries, expected {self.grid.n_cells}")
            arr.setflags(write=False)
            fields[name] = arr
        y = np.array(self.y, dtype=float)
        if y.shape != (self.grid.n_cells,):
            raise SchemaError(f"y has {y.size} entries, expected {self.grid.n_cells}")
        y.setflags(write=False)
        object.__setattr__(self, "fields", fields)
        object.__setattr__(self, "y", y)

    def __getitem__(self, name: str) -> np.ndarray:
        if name == "y":
            return self.y
        return self.fields[name]

    @property
    def coords(self) -> np.ndarray:
        return self.grid.coords

    @property
    def n(self) -> int:
        return self.grid.n_cells

    def features(self, names=MODEL_FEATURES) -> np.ndarray:
        return np.column_stack([self.fields[n] for n in names])

    def equals(self, other: Landscape) -> bool:
        return (
            self.grid == other.grid
            and np.array_equal(self.y, other.y)
            and all(np.array_equal(self.fields[n], other.fields[n]) for n in PREDICTOR_NAMES)
        )


def simulate_landscape(grid: GridSpec, seed: int, rule: TargetRule | str = TargetRule.LITERAL) -> Landscape:
    """Sample, derive and assemble one landscape; a pure function of ``(grid, seed)``."""
    raw = {
        name: sample_gaussian_field(grid, cov, derived_seed(seed, name))
        for name, cov in RAW_FIELD_COVARIANCES.items()
    }
    predictors = derive_predictors(raw, grid)
    y = compute_target(predictors, rule)
    return Landscape(grid=grid, fields=predictors, y=y, seed=seed, rule=TargetRule(rule))


def write_landscape_csv(landscape: Landscape, path: str | Path) -> None:
    grid = landscape.grid
    xy = grid.coords
    rows, cols = grid.rows, grid.cols
    columns = [landscape.fields[n] for n in PREDICTOR_NAMES] + [landscape.y]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for i in range(grid.n_cells):
            w.writerow(
                [i, int(rows[i]), int(cols[i]), f"{xy[i, 0]:.17g}", f"{xy[i, 1]:.17g}"]
                + [f"{c[i]:.17g}" for c in columns]
            )


def read_landscape_csv(path: str | Path, seed: int | None = None) -> Landscape:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise SchemaError(f"{path}: unexpected landscape header {header}")
        rows = list(reader)
    n = len(rows)
    side = math.isqrt(n)
    if side * side != n or n == 0:
        raise SchemaError(f"{path}: {n} rows do not form a square grid")
    data = np.array(rows, dtype=float)
    if not np.array_equal(data[:, 0], np.arange(n)):
        raise SchemaError(f"{path}: cell_id column must be 0..{n - 1} in order")
    grid = GridSpec(side)
    fields = {name: data[:, 5 + k] for k, name in enumerate(PREDICTOR_NAMES)}
    return Landscape(grid=grid, fields=fields, y=data[:, -1], seed=seed)
