"""Model scoring: RMSE, the cross-landscape "ideal" error, and CV runs."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .forest import ForestConfig, fit_forest
from .landscape import Landscape
from .resampling import Fold, ResamplingPlan
from .rng import derived_seed

PARAM_COLUMNS = ("v", "block_size", "blocking_method", "cluster_function", "buffer", "radius")


def rmse(y, y_hat) -> float:
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise ValueError("rmse of an empty vector is undefined")
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))


def format_param(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def param_signature(params: Mapping) -> str:
    """Canonical ``key=value`` string over the applicable parameter columns."""
    parts = [f"{k}={format_param(params[k])}" for k in PARAM_COLUMNS if params.get(k) is not None]
    return ";".join(parts)


@dataclass(frozen=True)
class RunResult:
    method: str
    params: Mapping = field(hash=False, compare=True)
    landscape_id: int = 0
    fold_id: int = 0
    rmse: float = 0.0
    n_assessment: int = 0
    n_analysis: int = 0

    @property
    def signature(self) -> str:
        return param_signature(self.params)


@dataclass(frozen=True)
class TargetRange:
    p05: float
    p95: float
    mean: float
    sd: float
    source_values: int

    @classmethod
    def from_values(cls, values) -> TargetRange:
        values = np.asarray(values, dtype=float)
        if values.size == 0:
            raise ValueError("target range needs at least one value")
        sd = float(values.std(ddof=1)) if values.size > 1 else 0.0
        p05, p95 = np.percentile(values, [5, 95])
        return cls(float(p05), float(p95), float(values.mean()), sd, int(values.size))

    def contains(self, value) -> np.ndarray:
        value = np.asarray(value, dtype=float)
        return (value >= self.p05) & (value <= self.p95)


def fit_on(landscape: Landscape, rows, config: ForestConfig):
    rows = np.asarray(rows)
    X = landscape.features(config.features)
    return fit_forest(X[rows], landscape.y[rows], config)


def ideal_rmse_values(landscapes: Sequence[Landscape], config: ForestConfig = ForestConfig()) -> np.ndarray:
    """RMSE of a forest fit to each landscape when predicting every other one.

    Returns an ``(n, n)`` array with NaN on the diagonal; entry ``[i, j]`` is
    the model trained on landscape ``i`` scored on landscape ``j``.
    """
    n = len(landscapes)
    if n < 2:
        raise ValueError("the ideal RMSE needs at least two landscapes")
    out = np.full((n, n), np.nan)
    features = [L.features(config.features) for L in landscapes]
    for i, train in enumerate(landscapes):
        forest = fit_forest(features[i], train.y, config.with_seed(derived_seed(config.seed, "ideal", i)))
        for j, test in enumerate(landscapes):
            if j != i:
                out[i, j] = rmse(test.y, forest.predict(features[j]))
    return out


def ideal_rmse_distribution(landscapes: Sequence[Landscape], config: ForestConfig = ForestConfig()):
    """Target range and the pooled ``n * (n - 1)`` cross-landscape RMSE values."""
    matrix = ideal_rmse_values(landscapes, config)
    values = matrix[~np.isnan(matrix)]
    return TargetRange.from_values(values), values


def cross_validate(
    landscape: Landscape,
    plan: ResamplingPlan | Iterable[tuple[int, Fold]],
    config: ForestConfig = ForestConfig(),
    *,
    landscape_id: int = 0,
    method: str | None = None,
    params: Mapping | None = None,
) -> list[RunResult]:
    """Fit on each fold's analysis rows and score the assessment rows.

    ``plan`` is either a :class:`ResamplingPlan` or an iterable of
    ``(fold_id, fold)`` pairs (used for lazily generated disc folds, where
    ``method`` and ``params`` must be given explicitly).
    """
    if isinstance(plan, ResamplingPlan):
        method = method or plan.method.value
        params = plan.params if params is None else params
        resub = plan.is_resubstitution
        folds = enumerate(plan.folds)
    else:
        if method is None:
            raise ValueError("method is required when folds are given as an iterable")
        params = params or {}
        resub = False
        folds = plan
    X = landscape.features(config.features)
    y = landscape.y
    results = []
    for fold_id, fold in folds:
        if resub:
            analysis = assessment = np.arange(landscape.n)
        else:
            analysis, assessment = fold.analysis, fold.assessment
        if analysis.size == 0 or assessment.size == 0:
            raise ValueError(f"fold {fold_id} has an empty analysis or assessment set")
        forest = fit_forest(X[analysis], y[analysis], config.with_seed(derived_seed(config.seed, "fold", fold_id)))
        score = rmse(y[assessment], forest.predict(X[assessment]))
        results.append(
            RunResult(method, dict(params), landscape_id, int(fold_id), score, int(assessment.size), int(analysis.size))
        )
    return results


def landscape_estimates(results: Iterable[RunResult]) -> dict[tuple[str, str, int], float]:
    """Per ``(method, signature, landscape)``: the unweighted mean of fold RMSEs."""
    groups: dict[tuple[str, str, int], list[float]] = defaultdict(list)
    for r in results:
        groups[(r.method, r.signature, r.landscape_id)].append(r.rmse)
    return {key: float(np.mean(vals)) for key, vals in groups.items()}


def success_rate(results: Iterable[RunResult], target: TargetRange) -> float:
    """Fraction of landscape-level CV estimates inside ``[target.p05, target.p95]``."""
    estimates = np.array(list(landscape_estimates(results).values()))
    if estimates.size == 0:
        raise ValueError("no results to score")
    return float(target.contains(estimates).mean())
