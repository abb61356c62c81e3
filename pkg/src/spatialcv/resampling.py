"""Fold construction for random and spatial cross-validation.

Every method produces a :class:`ResamplingPlan`: an ordered tuple of
:class:`Fold` objects, each splitting the observation indices into an
assessment set (held out and scored), an analysis set (used for fitting), and
a buffered-out set (used for neither).

Distances are planar Euclidean between observation coordinates. Inclusion
radii and exclusion buffers are closed balls: a point at distance exactly
``buffer`` is excluded. Comparisons carry an absolute tolerance of
:data:`DIST_TOL` so that buffers which are exact multiples of the grid spacing
are not split by floating-point rounding.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .clustering import kmeans, ward_clusters
from .errors import ParameterError, SchemaError
from .rng import substream

DIST_TOL = 1e-9


class Method(str, enum.Enum):
    RESUBSTITUTION = "resubstitution"
    VFOLD = "vfold"
    BLOCKED = "blocked"
    CLUSTERED = "clustered"
    BLO3 = "blo3"
    LODO = "lodo"


class BlockingMethod(str, enum.Enum):
    RANDOM = "random"
    CONTINUOUS = "continuous"
    SNAKE = "snake"


class ClusterFunction(str, enum.Enum):
    KMEANS = "kmeans"
    HIERARCHICAL = "hierarchical"


def _as_index(values) -> np.ndarray:
    arr = np.unique(np.asarray(values, dtype=np.int64))
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Fold:
    assessment: np.ndarray
    analysis: np.ndarray
    buffered_out: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __post_init__(self):
        for name in ("assessment", "analysis", "buffered_out"):
            object.__setattr__(self, name, _as_index(getattr(self, name)))

    @classmethod
    def holdout(cls, n: int, assessment) -> Fold:
        """Assessment as given, every other observation in the analysis set."""
        mask = np.zeros(n, dtype=bool)
        mask[np.asarray(assessment, dtype=np.int64)] = True
        return cls(np.flatnonzero(mask), np.flatnonzero(~mask))

    def roles(self, n: int) -> np.ndarray:
        """Per-observation role code: 0 analysis, 1 assessment, 2 buffered."""
        r = np.zeros(n, dtype=np.int8)
        r[self.buffered_out] = 2
        r[self.assessment] = 1
        return r

    def same_as(self, other: Fold) -> bool:
        return (
            np.array_equal(self.assessment, other.assessment)
            and np.array_equal(self.analysis, other.analysis)
            and np.array_equal(self.buffered_out, other.buffered_out)
        )


@dataclass(frozen=True)
class BufferSpec:
    radius: float = 0.0
    buffer: float = 0.0

    def __post_init__(self):
        if not (self.radius >= 0 and self.buffer >= 0):
            raise ParameterError(f"radius and buffer must be nonnegative, got {self}")


@dataclass(frozen=True, eq=False)
class ResamplingPlan:
    method: Method
    folds: tuple[Fold, ...]
    n: int
    params: dict[str, Any] = field(default_factory=dict)
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "folds", tuple(self.folds))

    def __len__(self) -> int:
        return len(self.folds)

    def __iter__(self):
        return iter(self.folds)

    @property
    def is_resubstitution(self) -> bool:
        return self.method is Method.RESUBSTITUTION

    def same_as(self, other: ResamplingPlan) -> bool:
        return (
            self.method == other.method
            and self.n == other.n
            and len(self.folds) == len(other.folds)
            and all(a.same_as(b) for a, b in zip(self.folds, other.folds))
        )


def _check_buffer(value: float, name: str = "buffer") -> float:
    value = float(value)
    if not value >= 0 or math.isinf(value):
        raise ParameterError(f"{name} must be a finite nonnegative distance, got {value}")
    return value


def buffered_mask(coords: np.ndarray, assessment: np.ndarray, buffer: float) -> np.ndarray:
    """Boolean mask of non-assessment points within ``buffer`` of any assessment point."""
    coords = np.asarray(coords, dtype=float)
    mask = np.zeros(len(coords), dtype=bool)
    if buffer <= 0 or len(assessment) == 0:
        return mask
    tree = cKDTree(coords[assessment])
    dist, _ = tree.query(coords, k=1, distance_upper_bound=buffer + 2 * DIST_TOL)
    mask = dist <= buffer + DIST_TOL
    mask[assessment] = False
    return mask


def apply_exclusion_buffer(fold: Fold, coords, buffer: float, *, label: str = "") -> Fold:
    """Move analysis points within ``buffer`` of any assessment point to buffered-out.

    Distances are point to point; the assessment set is never replaced by a
    hull or block polygon.
    """
    buffer = _check_buffer(buffer)
    if buffer == 0:
        return fold
    coords = np.asarray(coords, dtype=float)
    near = buffered_mask(coords, fold.assessment, buffer)
    analysis_mask = np.zeros(len(coords), dtype=bool)
    analysis_mask[fold.analysis] = True
    moved = analysis_mask & near
    remaining = np.flatnonzero(analysis_mask & ~near)
    if remaining.size == 0:
        where = f" ({label})" if label else ""
        raise ParameterError(f"buffer {buffer:g} leaves an empty analysis set{where}")
    return Fold(
        fold.assessment,
        remaining,
        np.union1d(fold.buffered_out, np.flatnonzero(moved)),
    )


def resubstitution(n: int) -> ResamplingPlan:
    """A single fold whose assessment and analysis sets are both everything."""
    if n < 1:
        raise ParameterError("resubstitution needs at least one observation")
    everything = np.arange(n)
    return ResamplingPlan(Method.RESUBSTITUTION, (Fold(everything, everything),), n)


def vfold(n: int, v: int, seed: int = 0) -> ResamplingPlan:
    """Random partition into ``v`` folds whose sizes differ by at most one."""
    if not 2 <= v <= n:
        raise ParameterError(f"v must satisfy 2 <= v <= n={n}, got {v}")
    perm = substream(seed, "vfold").permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[perm] = np.arange(n) % v
    folds = tuple(Fold.holdout(n, np.flatnonzero(fold_of == f)) for f in range(v))
    return ResamplingPlan(Method.VFOLD, folds, n, {"v": v}, seed)


def block_layout(block_size: float) -> tuple[int, int]:
    """``(n_rows, n_cols)`` of the block grid for a block covering ``block_size`` of the area."""
    block_size = float(block_size)
    if not 0 < block_size <= 1:
        raise ParameterError(f"block_size must be in (0, 1], got {block_size}")
    if math.isclose(block_size, 0.5):
        return 1, 2
    inv = 1.0 / block_size
    k = round(math.sqrt(inv))
    if k < 1 or not math.isclose(k * k, inv, rel_tol=1e-9):
        raise ParameterError(f"block_size must be 1/2 or 1/k^2, got {block_size}")
    return k, k


def block_ids(coords, block_size: float) -> tuple[np.ndarray, int, int]:
    """Row-major block id of every point on the unit square."""
    coords = np.asarray(coords, dtype=float)
    n_rows, n_cols = block_layout(block_size)
    col = np.clip(np.floor(coords[:, 0] * n_cols).astype(np.int64), 0, n_cols - 1)
    row = np.clip(np.floor(coords[:, 1] * n_rows).astype(np.int64), 0, n_rows - 1)
    return row * n_cols + col, n_rows, n_cols


def block_order(n_rows: int, n_cols: int, method: BlockingMethod | str, rng=None) -> np.ndarray:
    """Block ids in the order they are dealt to folds."""
    method = BlockingMethod(method)
    grid = np.arange(n_rows * n_cols).reshape(n_rows, n_cols)
    if method is BlockingMethod.CONTINUOUS:
        return grid.ravel()
    if method is BlockingMethod.SNAKE:
        snake = grid.copy()
        snake[1::2] = snake[1::2, ::-1]
        return snake.ravel()
    if rng is None:
        raise ValueError("random blocking needs a generator")
    return rng.permutation(grid.ravel())


def block_cv(
    coords,
    block_size: float,
    v: int | None = None,
    blocking_method: BlockingMethod | str = BlockingMethod.RANDOM,
    buffer: float = 0.0,
    seed: int = 0,
) -> ResamplingPlan:
    """Spatial blocking: tile the unit square, deal blocks cyclically into folds.

    ``v=None`` gives leave-one-block-out. Blocks are enumerated row-major
    (``continuous``), row-major with alternating direction (``snake``) or in a
    seeded random order, and block ``b`` of that order goes to fold ``b % v``.
    """
    coords = np.asarray(coords, dtype=float)
    n = len(coords)
    buffer = _check_buffer(buffer)
    blocking_method = BlockingMethod(blocking_method)
    ids, n_rows, n_cols = block_ids(coords, block_size)
    rng = substream(seed, "blocks")
    order = block_order(n_rows, n_cols, blocking_method, rng)
    occupied = set(np.unique(ids).tolist())
    order = [b for b in order.tolist() if b in occupied]
    n_blocks = len(order)
    if v is None:
        v = n_blocks
    if not 2 <= v <= n_blocks:
        raise ParameterError(f"v must satisfy 2 <= v <= {n_blocks} nonempty blocks, got {v}")
    fold_of_block = {b: k % v for k, b in enumerate(order)}
    fold_of = np.array([fold_of_block[b] for b in ids.tolist()], dtype=np.int64)
    folds = []
    for f in range(v):
        fold = Fold.holdout(n, np.flatnonzero(fold_of == f))
        folds.append(apply_exclusion_buffer(fold, coords, buffer, label=f"fold {f}"))
    params = {
        "block_size": float(block_size),
        "v": v,
        "blocking_method": blocking_method.value,
        "buffer": buffer,
    }
    return ResamplingPlan(Method.BLOCKED, tuple(folds), n, params, seed)


def _relabel_by_first_appearance(labels: np.ndarray) -> np.ndarray:
    uniq, first = np.unique(labels, return_index=True)
    remap = np.empty(labels.max() + 1, dtype=np.int64)
    remap[uniq[np.argsort(first)]] = np.arange(len(uniq))
    return remap[labels]


def cluster_cv(
    coords,
    v: int,
    cluster_function: ClusterFunction | str = ClusterFunction.KMEANS,
    buffer: float = 0.0,
    seed: int = 0,
) -> ResamplingPlan:
    """Leave-one-cluster-out CV over ``v`` clusters of the coordinates."""
    coords = np.asarray(coords, dtype=float)
    n = len(coords)
    buffer = _check_buffer(buffer)
    cluster_function = ClusterFunction(cluster_function)
    if not 2 <= v <= n:
        raise ParameterError(f"v must satisfy 2 <= v <= n={n}, got {v}")
    if cluster_function is ClusterFunction.KMEANS:
        labels, _ = kmeans(coords, v, seed=seed)
    else:
        labels = ward_clusters(coords, v)
    counts = np.bincount(labels, minlength=v)
    if len(counts) != v or (counts == 0).any():
        raise ParameterError(f"clustering produced an empty cluster (sizes {counts.tolist()})")
    labels = _relabel_by_first_appearance(labels)
    folds = []
    for f in range(v):
        fold = Fold.holdout(n, np.flatnonzero(labels == f))
        folds.append(apply_exclusion_buffer(fold, coords, buffer, label=f"fold {f}"))
    params = {"v": v, "cluster_function": cluster_function.value, "buffer": buffer}
    return ResamplingPlan(Method.CLUSTERED, tuple(folds), n, params, seed)


def _disc_fold(coords, tree, i, radius, buffer) -> Fold:
    n = len(coords)
    if radius > 0:
        assessment = np.asarray(tree.query_ball_point(coords[i], radius + DIST_TOL), dtype=np.int64)
    else:
        assessment = np.array([i], dtype=np.int64)
    near = buffered_mask(coords, assessment, buffer) if buffer > 0 else np.zeros(n, dtype=bool)
    keep = np.ones(n, dtype=bool)
    keep[assessment] = False
    keep &= ~near
    return Fold(assessment, np.flatnonzero(keep), np.flatnonzero(near))


def iter_disc_folds(coords, radius: float = 0.0, buffer: float = 0.0, centers: Sequence[int] | None = None):
    """Yield ``(center, fold)`` for buffered leave-one-disc-out, lazily.

    Raises :class:`ParameterError` at the first center whose analysis set is
    empty.
    """
    coords = np.asarray(coords, dtype=float)
    radius = _check_buffer(radius, "radius")
    buffer = _check_buffer(buffer)
    tree = cKDTree(coords) if radius > 0 else None
    if centers is None:
        centers = range(len(coords))
    for i in centers:
        fold = _disc_fold(coords, tree, int(i), radius, buffer)
        if fold.analysis.size == 0:
            raise ParameterError(
                f"radius {radius:g} / buffer {buffer:g} leave an empty analysis set "
                f"for the fold centred on observation {int(i)}"
            )
        yield int(i), fold


def buffered_vfold(coords, radius: float = 0.0, buffer: float = 0.0) -> ResamplingPlan:
    """One fold per observation: a disc of ``radius`` held out, ``buffer`` excluded around it.

    ``radius=0`` is buffered leave-one-observation-out (BLO3); ``radius>0`` is
    leave-one-disc-out (LODO). The buffer is measured from every assessment
    point separately, so it hugs the disc rather than forming a ring.
    """
    coords = np.asarray(coords, dtype=float)
    folds = tuple(fold for _, fold in iter_disc_folds(coords, radius, buffer))
    method = Method.LODO if radius > 0 else Method.BLO3
    return ResamplingPlan(method, folds, len(coords), {"radius": float(radius), "buffer": float(buffer)})


ROLE_NAMES = {0: "analysis", 1: "assessment", 2: "buffered"}


def write_plan_csv(plan: ResamplingPlan, path: str | Path) -> None:
    """``fold_id,cell_id,role`` rows ordered by ``(fold_id, cell_id)``.

    Method, parameters and seed go to a ``.json`` sidecar next to ``path``.
    A resubstitution fold lists each cell twice (assessment, then analysis).
    """
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("fold_id", "cell_id", "role"))
        for f, fold in enumerate(plan.folds):
            if plan.is_resubstitution:
                for i in range(plan.n):
                    w.writerow((f, i, "assessment"))
                    w.writerow((f, i, "analysis"))
                continue
            roles = fold.roles(plan.n)
            for i in range(plan.n):
                w.writerow((f, i, ROLE_NAMES[int(roles[i])]))
    meta = {"method": plan.method.value, "n": plan.n, "params": plan.params, "seed": plan.seed}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def read_plan_csv(path: str | Path) -> ResamplingPlan:
    path = Path(path)
    sidecar = path.with_suffix(".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    members: dict[int, dict[str, list[int]]] = {}
    n = 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != ("fold_id", "cell_id", "role"):
            raise SchemaError(f"{path}: unexpected plan header {header}")
        for row in reader:
            f, i, role = int(row[0]), int(row[1]), row[2]
            if role not in ("assessment", "analysis", "buffered"):
                raise SchemaError(f"{path}: unknown role {role!r}")
            members.setdefault(f, {"assessment": [], "analysis": [], "buffered": []})[role].append(i)
            n = max(n, i + 1)
    n = int(meta.get("n", n))
    folds = tuple(
        Fold(m["assessment"], m["analysis"], m["buffered"]) for _, m in sorted(members.items())
    )
    method = meta.get("method")
    if method is None:
        method = Method.RESUBSTITUTION if len(folds) == 1 and np.array_equal(
            folds[0].assessment, folds[0].analysis
        ) else Method.VFOLD
    return ResamplingPlan(method, folds, n, meta.get("params", {}), meta.get("seed"))
