"""Seeded random-forest regression.

Each tree is a CART regression tree grown on a bootstrap sample, trying
``mtry`` randomly chosen features per node and splitting at midpoints between
consecutive distinct values. A node is split only while it holds more than
``min_node_size`` samples. Tree ``t`` draws all of its randomness from its own
stream derived from ``(seed, t)``, so a forest is bit-reproducible regardless
of how trees are scheduled across threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import _trees
from .errors import SchemaError
from .landscape import MODEL_FEATURES
from .rng import derived_seed


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    min_node_size: int = 5
    mtry: int = 2
    features: tuple[str, ...] = MODEL_FEATURES
    seed: int = 0
    bootstrap: bool = True
    n_jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        if self.n_trees < 1 or self.min_node_size < 1 or self.mtry < 1:
            raise ValueError("n_trees, min_node_size and mtry must be positive")
        if self.mtry > len(self.features):
            raise ValueError(f"mtry={self.mtry} exceeds the {len(self.features)} features")

    def with_seed(self, seed: int) -> ForestConfig:
        return ForestConfig(
            self.n_trees, self.min_node_size, self.mtry, self.features, seed, self.bootstrap, self.n_jobs
        )


@dataclass(frozen=True, eq=False)
class Tree:
    """Node arrays of one tree; ``feature == -1`` marks a leaf holding ``value``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.empty(len(X))
        for i, row in enumerate(X):
            node = 0
            while self.feature[node] >= 0:
                node = self.left[node] if row[self.feature[node]] <= self.threshold[node] else self.right[node]
            out[i] = self.value[node]
        return out


@dataclass(frozen=True, eq=False)
class RegressionForest:
    trees: tuple[Tree, ...]
    config: ForestConfig
    training_target_range: tuple[float, float]
    _flat: tuple = field(repr=False, default=())

    def predict(self, X_new) -> np.ndarray:
        return predict(self, X_new)


def tree_seed(seed: int, t: int) -> np.uint64:
    return np.uint64(derived_seed(seed, "tree", t))


def bootstrap_indices(seed: int, t: int, n: int) -> np.ndarray:
    """The bootstrap rows drawn by tree ``t`` of a forest seeded with ``seed``."""
    return _trees.draw_bootstrap(tree_seed(seed, t), n)


def _as_matrix(X, features: Sequence[str]) -> np.ndarray:
    if isinstance(X, Mapping):
        missing = [f for f in features if f not in X]
        if missing:
            raise SchemaError(f"feature mismatch: missing {missing}")
        X = np.column_stack([np.asarray(X[f], dtype=float) for f in features]) if features else np.empty((0, 0))
    X = np.asarray(X, dtype=float)
    if X.ndim == 1 and X.size == 0:
        X = X.reshape(0, len(features))
    if X.ndim != 2 or X.shape[1] != len(features):
        raise SchemaError(f"feature mismatch: expected {len(features)} columns {list(features)}, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise SchemaError("feature matrix contains missing or non-finite values")
    return np.ascontiguousarray(X)


def fit_forest(X, y, config: ForestConfig = ForestConfig()) -> RegressionForest:
    X = _as_matrix(X, config.features)
    y = np.ascontiguousarray(y, dtype=float)
    if X.shape[0] == 0:
        raise ValueError("cannot fit a forest on an empty training set")
    if y.shape != (X.shape[0],):
        raise SchemaError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
    if not np.isfinite(y).all():
        raise SchemaError("response contains missing or non-finite values")

    ranks = np.empty(X.shape, dtype=np.int64)
    for j in range(X.shape[1]):
        ranks[:, j] = np.unique(X[:, j], return_inverse=True)[1]

    def grow(t):
        arrays = _trees.grow_tree(
            X, ranks, y, config.min_node_size, config.mtry, tree_seed(config.seed, t), config.bootstrap
        )
        return Tree(*arrays)

    if config.n_jobs > 1:
        with ThreadPoolExecutor(config.n_jobs) as pool:
            trees = tuple(pool.map(grow, range(config.n_trees)))
    else:
        trees = tuple(grow(t) for t in range(config.n_trees))

    sizes = np.array([t.n_nodes for t in trees])
    offsets = np.concatenate(([0], np.cumsum(sizes)[:-1]))

    def shifted(arrs, offs):
        return np.concatenate([np.where(a >= 0, a + o, -1) for a, o in zip(arrs, offs)]).astype(np.int32)

    flat = (
        offsets.astype(np.int64),
        np.concatenate([t.feature for t in trees]).astype(np.int32),
        np.concatenate([t.threshold for t in trees]),
        shifted([t.left for t in trees], offsets),
        shifted([t.right for t in trees], offsets),
        np.concatenate([t.value for t in trees]),
    )
    return RegressionForest(trees, config, (float(y.min()), float(y.max())), flat)


def predict(forest: RegressionForest, X_new) -> np.ndarray:
    """Mean of the tree predictions for every row of ``X_new``."""
    X_new = _as_matrix(X_new, forest.config.features)
    if X_new.shape[0] == 0:
        return np.empty(0)
    lo, hi = forest.training_target_range
    return _trees.predict_forest(X_new, *forest._flat, lo, hi)
