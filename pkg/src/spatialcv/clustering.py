"""Spatial clustering used to build clustered CV folds."""

from __future__ import annotations

import numpy as np
from scipy.cluster.hierarchy import cut_tree, linkage

from .errors import ParameterError
from .rng import substream


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def kmeans_plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest = _sq_dists(points, centers[:1]).ravel()
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            # fewer distinct points than clusters; fall back to uniform picks
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=closest / total)
        centers[j] = points[idx]
        closest = np.minimum(closest, _sq_dists(points, centers[j : j + 1]).ravel())
    return centers


def kmeans(points, k: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-10):
    """Lloyd's algorithm from a seeded k-means++ start.

    Returns ``(labels, centers)``. Ties in the nearest-center assignment go to
    the lowest cluster index (``argmin`` order).
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if not 1 <= k <= n:
        raise ParameterError(f"k must be in [1, {n}], got {k}")
    rng = substream(seed, "kmeans")
    if k == n:
        return np.arange(n), points.copy()
    centers = kmeans_plus_plus(points, k, rng)
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        d2 = _sq_dists(points, centers)
        labels = np.argmin(d2, axis=1)
        new = centers.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = points[members].mean(axis=0)
            else:
                # re-seed an empty cluster at the worst-served point
                far = int(np.argmax(d2[np.arange(n), labels]))
                new[j] = points[far]
                labels[far] = j
        shift = np.sqrt(((new - centers) ** 2).sum(axis=1)).max()
        centers = new
        if shift < tol:
            break
    labels = np.argmin(_sq_dists(points, centers), axis=1)
    return labels, centers


def ward_clusters(points, k: int) -> np.ndarray:
    """Agglomerative Ward clustering cut at exactly ``k`` clusters."""
    points = np.asarray(points, dtype=float)
    n = len(points)
    if not 1 <= k <= n:
        raise ParameterError(f"k must be in [1, {n}], got {k}")
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    z = linkage(points, method="ward", metric="euclidean")
    return cut_tree(z, n_clusters=k).ravel().astype(np.int64)


def within_cluster_ss(points, labels) -> float:
    points = np.asarray(points, dtype=float)
    total = 0.0
    for lab in np.unique(labels):
        members = points[labels == lab]
        total += float(((members - members.mean(axis=0)) ** 2).sum())
    return total
