"""Empirical variograms and automatic model fitting.

The empirical variogram uses the Matheron estimator over equal-width distance
bins. Models (spherical, exponential, gaussian, each with a nugget) are fit by
weighted least squares with weights ``N_h / h**2``; for a fixed scale the
nugget and partial sill enter linearly and are solved exactly under their box
constraints, leaving a one-dimensional search over the scale.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.spatial.distance import pdist

from .errors import EstimationError

DEFAULT_BINS = 15
SCALE_GRID = 64


class ModelFamily(str, enum.Enum):
    SPHERICAL = "spherical"
    EXPONENTIAL = "exponential"
    GAUSSIAN = "gaussian"


# practical range as a multiple of the scale parameter
RANGE_FACTOR = {
    ModelFamily.SPHERICAL: 1.0,
    ModelFamily.EXPONENTIAL: 3.0,
    ModelFamily.GAUSSIAN: math.sqrt(3.0),
}


def correlation_shape(family: ModelFamily | str, h, scale: float) -> np.ndarray:
    """Unit-sill semivariance shape ``f(h / scale)``, 0 at the origin."""
    r = np.asarray(h, dtype=float) / scale
    family = ModelFamily(family)
    if family is ModelFamily.SPHERICAL:
        return np.where(r < 1.0, 1.5 * r - 0.5 * r**3, 1.0)
    if family is ModelFamily.EXPONENTIAL:
        return 1.0 - np.exp(-r)
    return 1.0 - np.exp(-(r**2))


@dataclass(frozen=True, eq=False)
class EmpiricalVariogram:
    mean_lag: np.ndarray
    gamma: np.ndarray
    pairs: np.ndarray
    max_lag: float
    sample_variance: float

    @property
    def bins(self) -> list[tuple[float, float, int]]:
        return [(float(h), float(g), int(c)) for h, g, c in zip(self.mean_lag, self.gamma, self.pairs)]

    def __len__(self) -> int:
        return len(self.mean_lag)


def empirical_variogram(coords, values, n_bins: int = DEFAULT_BINS, max_lag: float | None = None) -> EmpiricalVariogram:
    coords = np.asarray(coords, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(values) < 2 or len(coords) != len(values):
        raise EstimationError("need at least two observations with matching coordinates")
    dist = pdist(coords)
    if max_lag is None:
        max_lag = 0.5 * float(dist.max())
    if not max_lag > 0:
        raise EstimationError(f"max_lag must be positive, got {max_lag}")
    if n_bins < 1:
        raise EstimationError(f"n_bins must be positive, got {n_bins}")
    sq = pdist(values[:, None], "sqeuclidean")
    keep = dist <= max_lag
    dist, sq = dist[keep], sq[keep]
    width = max_lag / n_bins
    idx = np.minimum((dist / width).astype(np.int64), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    lag_sum = np.bincount(idx, weights=dist, minlength=n_bins)
    sq_sum = np.bincount(idx, weights=sq, minlength=n_bins)
    ok = counts > 0
    # a single bin is only acceptable when exactly one was asked for
    if ok.sum() < min(2, n_bins):
        raise EstimationError(f"only {int(ok.sum())} nonempty lag bins; need at least {min(2, n_bins)}")
    return EmpiricalVariogram(
        mean_lag=lag_sum[ok] / counts[ok],
        gamma=sq_sum[ok] / (2.0 * counts[ok]),
        pairs=counts[ok],
        max_lag=float(max_lag),
        sample_variance=float(values.var(ddof=1)),
    )


@dataclass(frozen=True)
class VariogramFit:
    model_family: ModelFamily
    nugget: float
    partial_sill: float
    scale: float
    effective_range: float
    weighted_sse: float
    near_nugget: bool = False
    candidates: tuple = field(default=(), repr=False, compare=False)

    def predict(self, h) -> np.ndarray:
        return self.nugget + self.partial_sill * correlation_shape(self.model_family, h, self.scale)


def _weights(ev: EmpiricalVariogram) -> np.ndarray:
    h = np.maximum(ev.mean_lag, 1e-12)
    return ev.pairs / h**2


def _solve_linear(shape, gamma, w, nugget_max):
    """Box-constrained WLS for ``gamma ~ nugget + psill * shape``; returns (nugget, psill, sse)."""

    def sse(c0, c1):
        r = gamma - c0 - c1 * shape
        return float(np.sum(w * r * r))

    sw, sf, sg = w.sum(), (w * shape).sum(), (w * gamma).sum()
    sff, sfg = (w * shape * shape).sum(), (w * shape * gamma).sum()
    candidates = []
    det = sw * sff - sf * sf
    if det > 1e-14 * max(sw * sff, 1e-300):
        c0 = (sff * sg - sf * sfg) / det
        c1 = (sw * sfg - sf * sg) / det
        if 0 <= c0 <= nugget_max and c1 >= 0:
            candidates.append((c0, c1))
    for c0 in (0.0, nugget_max):
        c1 = max((sfg - c0 * sf) / sff, 0.0) if sff > 0 else 0.0
        candidates.append((c0, c1))
    candidates.append((min(max(sg / sw, 0.0), nugget_max), 0.0))
    best = min(candidates, key=lambda c: sse(*c))
    return best[0], best[1], sse(*best)


def _fit_family(ev, family, lo, hi):
    w = _weights(ev)
    nugget_max = max(ev.sample_variance, 0.0)

    def objective(log_scale):
        shape = correlation_shape(family, ev.mean_lag, math.exp(log_scale))
        return _solve_linear(shape, ev.gamma, w, nugget_max)[2]

    grid = np.linspace(math.log(lo), math.log(hi), SCALE_GRID)
    values = [objective(s) for s in grid]
    k = int(np.argmin(values))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    best_s, best_v = grid[k], values[k]
    if b > a:
        res = minimize_scalar(objective, bounds=(a, b), method="bounded", options={"xatol": 1e-8})
        if res.success and res.fun < best_v:
            best_s, best_v = float(res.x), float(res.fun)
    scale = math.exp(best_s)
    nugget, psill, wsse = _solve_linear(correlation_shape(family, ev.mean_lag, scale), ev.gamma, w, nugget_max)
    total = nugget + psill
    near_nugget = total <= 0 or psill / total < 0.1 or scale <= lo * 1.01
    return VariogramFit(family, nugget, psill, scale, RANGE_FACTOR[family] * scale, wsse, near_nugget)


def fit_variogram_model(ev: EmpiricalVariogram, families=tuple(ModelFamily)) -> VariogramFit:
    """Best of the candidate families by weighted SSE.

    The scale is searched on ``[min mean lag, 2 * max_lag]``; the nugget is
    bounded by the sample variance and the partial sill is nonnegative.
    """
    if len(ev) < 2:
        raise EstimationError("need at least two nonempty bins to fit a variogram model")
    lo = float(ev.mean_lag.min())
    hi = 2.0 * ev.max_lag
    if not 0 < lo < hi:
        raise EstimationError(f"degenerate scale bounds [{lo}, {hi}]")
    fits, failures = [], []
    for family in families:
        try:
            fit = _fit_family(ev, ModelFamily(family), lo, hi)
        except (ValueError, FloatingPointError, ZeroDivisionError) as exc:
            failures.append(f"{family}: {exc}")
            continue
        if math.isfinite(fit.weighted_sse):
            fits.append(fit)
        else:
            failures.append(f"{family}: non-finite objective")
    if not fits:
        raise EstimationError("variogram fit failed for every family: " + "; ".join(failures))
    best = min(fits, key=lambda f: f.weighted_sse)
    return VariogramFit(
        best.model_family,
        best.nugget,
        best.partial_sill,
        best.scale,
        best.effective_range,
        best.weighted_sse,
        best.near_nugget,
        tuple(fits),
    )


def autocorrelation_range(coords, values, n_bins: int = DEFAULT_BINS, max_lag: float | None = None) -> VariogramFit:
    return fit_variogram_model(empirical_variogram(coords, values, n_bins, max_lag))


def write_variogram_csv(ev: EmpiricalVariogram, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("bin", "mean_lag", "gamma", "pairs"))
        for i, (h, g, c) in enumerate(ev.bins):
            w.writerow((i, f"{h:.17g}", f"{g:.17g}", c))


def write_fit_csv(fit: VariogramFit, path: str | Path) -> None:
    """One row per candidate family, the selected family first."""
    rows = [fit] + [c for c in fit.candidates if c.model_family != fit.model_family]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("family", "nugget", "psill", "scale", "range", "wsse"))
        for f in rows:
            w.writerow(
                (
                    ModelFamily(f.model_family).value,
                    f"{f.nugget:.17g}",
                    f"{f.partial_sill:.17g}",
                    f"{f.scale:.17g}",
                    f"{f.effective_range:.17g}",
                    f"{f.weighted_sse:.17g}",
                )
            )
