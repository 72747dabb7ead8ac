"""Cloud-to-cloud distances: Chamfer (squared, both directions) and exact EMD."""

from typing import Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from data.cloud import CloudLike, as_points
from utils.errors import MetricError


def _nonempty(x: CloudLike, label: str) -> np.ndarray:
    pts = as_points(x)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise MetricError(f"{label}: empty cloud")
    return pts


def chamfer(x: CloudLike, y: CloudLike) -> float:
    """Mean squared nearest-neighbour distance X->Y plus Y->X."""
    a, b = _nonempty(x, "chamfer"), _nonempty(y, "chamfer")
    d = cdist(a, b, "sqeuclidean")
    return float(d.min(axis=1).mean() + d.min(axis=0).mean())


def emd_matching(x: CloudLike, y: CloudLike) -> Tuple[float, np.ndarray]:
    """Optimal bijection under Euclidean cost; returns (mean cost, perm) with perm[i] the match of x[i]."""
    a, b = _nonempty(x, "emd"), _nonempty(y, "emd")
    if a.shape[0] != b.shape[0]:
        raise MetricError(f"emd needs equal point counts, got {a.shape[0]} and {b.shape[0]}")
    cost = cdist(a, b, "euclidean")
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(a.shape[0], dtype=np.int64)
    perm[rows] = cols
    return float(cost[rows, cols].sum() / a.shape[0]), perm


def emd(x: CloudLike, y: CloudLike) -> float:
    return emd_matching(x, y)[0]


DISTANCES = {"CD": chamfer, "EMD": emd}
