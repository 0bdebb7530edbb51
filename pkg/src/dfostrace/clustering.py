"""K-means (Lloyd) clustering of hit points with deterministic seeding."""

from __future__ import annotations

import itertools
import math

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

MAX_ITER = 100
EXHAUSTIVE_SEEDS = 256


class ClusteringError(ValueError):
    pass


@dataclass
class Cluster:
    """A set of member points and their mean.

    ``members`` holds the row indices into the point array passed to
    :func:`kmeans_fit`; ``points`` the member coordinates themselves.
    """

    centroid: np.ndarray
    members: np.ndarray
    points: np.ndarray
    objective: float = 0.0  # total J of the fit this cluster belongs to
    history: List[float] = field(default_factory=list, repr=False)

    @property
    def size(self) -> int:
        return len(self.members)


def objective(points: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    """Sum of squared Euclidean distances of each point to its cluster centroid."""
    d = points - centroids[labels]
    return float(np.sum(d * d))


def farthest_point_init(points: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Pick k distinct seed points: the first by ``seed``, then repeatedly the farthest."""
    distinct = np.unique(points, axis=0)
    rng = np.random.default_rng(seed)
    centers = [distinct[rng.integers(len(distinct))]]
    d2 = np.sum((distinct - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        # argmax takes the first maximum, which keeps this deterministic
        nxt = distinct[int(np.argmax(d2))]
        centers.append(nxt)
        d2 = np.minimum(d2, np.sum((distinct - nxt) ** 2, axis=1))
    return np.array(centers, dtype=float)


def _assign(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    return np.argmin(d2, axis=1)


def _lloyd(pts: np.ndarray, centroids: np.ndarray, max_iter: int):
    k = len(centroids)
    labels = _assign(pts, centroids)
    history = []
    for _ in range(max_iter):
        for j in range(k):
            mask = labels == j
            # a cluster can only empty after the first pass; keep its centroid then
            if mask.any():
                centroids[j] = pts[mask].mean(axis=0)
        history.append(objective(pts, labels, centroids))
        new_labels = _assign(pts, centroids)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels, centroids, history


def restart_seeds(pts: np.ndarray, k: int, seed: int, n_init: Optional[int]) -> List[np.ndarray]:
    """Initial centroid sets: farthest-point seeding from ``seed`` first, then restarts.

    Restarts run farthest-point seeding from every distinct point and from
    random k-subsets drawn with ``seed``, so the search is reproducible. Small
    inputs (at most ``EXHAUSTIVE_SEEDS`` k-subsets) instead start once from
    every k-subset of distinct points.
    """
    distinct = np.unique(pts, axis=0)
    inits = [farthest_point_init(pts, k, seed)]
    if k == 1:
        return inits
    if n_init is None and math.comb(len(distinct), k) <= EXHAUSTIVE_SEEDS:
        inits.extend(distinct[list(c)].astype(float) for c in itertools.combinations(range(len(distinct)), k))
        return inits
    if n_init is None:
        n_init = 1 + len(distinct) + 2 * len(distinct) if len(distinct) <= 64 else 10
    for i in range(len(distinct)):
        if len(inits) >= n_init:
            break
        first = distinct[i]
        d2 = np.sum((distinct - first) ** 2, axis=1)
        centers = [first]
        for _ in range(1, k):
            nxt = distinct[int(np.argmax(d2))]
            centers.append(nxt)
            d2 = np.minimum(d2, np.sum((distinct - nxt) ** 2, axis=1))
        inits.append(np.array(centers, dtype=float))
    rng = np.random.default_rng(seed)
    while len(inits) < n_init:
        inits.append(distinct[rng.choice(len(distinct), size=k, replace=False)].astype(float))
    return inits


def kmeans_fit(
    points: Sequence,
    k: int,
    seed: int = 0,
    max_iter: int = MAX_ITER,
    n_init: Optional[int] = None,
) -> List[Cluster]:
    """Lloyd iteration minimising the within-cluster sum of squares.

    Args:
        points: (n, d) coordinates, e.g. (time, channel) hit points.
        k: number of clusters, at most the number of distinct points.
        seed: selects the first farthest-point seed and the restart draws.
        n_init: number of Lloyd runs; the lowest objective wins (ties go to
            the earliest run). ``None`` picks a count that scales with the
            number of distinct points.

    Returns:
        k clusters; every cluster carries the final objective and the
        per-iteration objective history of the winning run, which never
        increases.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if len(pts) == 0:
        raise ClusteringError("kmeans_fit needs at least one point")
    if int(k) != k or k < 1:
        raise ClusteringError(f"k must be a positive integer, got {k}")
    k = int(k)
    n_distinct = len(np.unique(pts, axis=0))
    if k > n_distinct:
        raise ClusteringError(f"k={k} exceeds the number of distinct points ({n_distinct})")

    best = None
    for init in restart_seeds(pts, k, seed, n_init):
        labels, centroids, history = _lloyd(pts, init, max_iter)
        j_final = objective(pts, labels, centroids)
        if best is None or j_final < best[0]:
            best = (j_final, labels, centroids, history)

    j_final, labels, centroids, history = best
    clusters = []
    for j in range(k):
        idx = np.nonzero(labels == j)[0]
        clusters.append(Cluster(centroids[j].copy(), idx, pts[idx], j_final, list(history)))
    return clusters


def labels_of(clusters: List[Cluster], n: int) -> np.ndarray:
    labels = np.full(n, -1, dtype=int)
    for j, c in enumerate(clusters):
        labels[c.members] = j
    return labels


def nearest_cluster(clusters: List[Cluster], reference) -> Optional[Cluster]:
    """Non-empty cluster whose centroid is nearest ``reference`` (lowest index on ties)."""
    ref = np.asarray(reference, dtype=float)
    best, best_d = None, np.inf
    for c in clusters:
        if c.size == 0:
            continue
        d = float(np.sum((c.centroid - ref) ** 2))
        if d < best_d:
            best, best_d = c, d
    return best
