"""Brute-force reference implementations used as test oracles."""

import itertools

import numpy as np


def exhaustive_kmeans_objective(points, k: int) -> float:
    """Minimum within-cluster sum of squares over all k^n label assignments."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = len(pts)
    labels = np.array(list(itertools.product(range(k), repeat=n)), dtype=np.int8)
    sq = np.sum(pts * pts, axis=1)
    total = np.zeros(len(labels))
    for j in range(k):
        mask = (labels == j).astype(float)
        cnt = mask.sum(axis=1)
        s = mask @ pts
        ss = mask @ sq
        with np.errstate(invalid="ignore", divide="ignore"):
            part = ss - np.where(cnt > 0, np.sum(s * s, axis=1) / cnt, 0.0)
        total += part
    return float(total.min())
