"""
Set-level generative metrics over lists of clouds.

Orientation follows the usual definitions with S_g generated and S_r
reference: MMD averages, over references, the distance to the closest
generated cloud; COV is the fraction of references that are the nearest
reference of some generated cloud.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.stats import entropy

from data.cloud import CloudLike, as_points
from metrics.distances import DISTANCES
from utils.errors import MetricError, NormalizationError

logger = logging.getLogger(__name__)

BOX_TOL = 1e-9

Distance = Callable[[CloudLike, CloudLike], float]


def _distance(D) -> Distance:
    if callable(D):
        return D
    key = str(D).upper()
    if key not in DISTANCES:
        raise MetricError(f"unknown distance {D!r}; expected CD or EMD")
    return DISTANCES[key]


def _check_sets(sg: Sequence, sr: Sequence) -> None:
    if len(sg) == 0 or len(sr) == 0:
        raise MetricError(f"empty set (|Sg|={len(sg)}, |Sr|={len(sr)})")


def distance_matrix(
    rows: Sequence[CloudLike],
    cols: Sequence[CloudLike],
    D="CD",
    workers: int = 1,
    row_names: Optional[Sequence[str]] = None,
    col_names: Optional[Sequence[str]] = None,
) -> np.ndarray:
    """M[i, j] = D(rows[i], cols[j]); rows may be computed in parallel."""
    dist = _distance(D)
    row_names = row_names or [f"gen[{i}]" for i in range(len(rows))]
    col_names = col_names or [f"ref[{j}]" for j in range(len(cols))]

    def one_row(i: int) -> np.ndarray:
        out = np.empty(len(cols))
        for j, y in enumerate(cols):
            try:
                out[j] = dist(rows[i], y)
            except MetricError as e:
                raise MetricError(e.reason, pair=(row_names[i], col_names[j])) from e
        return out

    if workers > 1 and len(rows) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            matrix = list(pool.map(one_row, range(len(rows))))
    else:
        matrix = [one_row(i) for i in range(len(rows))]
    return np.vstack(matrix) if matrix else np.empty((0, len(cols)))


def mmd_from_matrix(m: np.ndarray) -> float:
    return float(m.min(axis=0).mean())


def coverage_from_matrix(m: np.ndarray) -> float:
    nearest = np.argmin(m, axis=1)
    return float(len(set(nearest.tolist())) / m.shape[1])


def one_nna_from_matrices(gg: np.ndarray, gr: np.ndarray, rr: np.ndarray) -> float:
    """Leave-one-out 1-NN accuracy over the pooled set [Sg; Sr]; ties go to the first index."""
    pooled = np.block([[gg, gr], [gr.T, rr]]).astype(np.float64)
    n = pooled.shape[0]
    if n < 2:
        raise MetricError(f"1-NNA needs a pooled set of at least 2 clouds, got {n}")
    np.fill_diagonal(pooled, np.inf)
    labels = np.concatenate([np.zeros(gg.shape[0], dtype=int), np.ones(rr.shape[0], dtype=int)])
    nearest = np.argmin(pooled, axis=1)
    return float(np.mean(labels[nearest] == labels))


def mmd(sg: Sequence[CloudLike], sr: Sequence[CloudLike], D="CD", workers: int = 1) -> float:
    _check_sets(sg, sr)
    return mmd_from_matrix(distance_matrix(sg, sr, D, workers))


def coverage(sg: Sequence[CloudLike], sr: Sequence[CloudLike], D="CD", workers: int = 1) -> float:
    _check_sets(sg, sr)
    return coverage_from_matrix(distance_matrix(sg, sr, D, workers))


def one_nna(sg: Sequence[CloudLike], sr: Sequence[CloudLike], D="CD", workers: int = 1) -> float:
    if len(sg) + len(sr) < 2:
        raise MetricError(f"1-NNA needs a pooled set of at least 2 clouds, got {len(sg) + len(sr)}")
    gg = distance_matrix(sg, sg, D, workers)
    gr = distance_matrix(sg, sr, D, workers)
    rr = distance_matrix(sr, sr, D, workers)
    return one_nna_from_matrices(gg, gr, rr)


# ─────────────────────────── JSD ──────────────────────────────────────────

def voxel_histogram(clouds: Sequence[CloudLike], grid: int) -> np.ndarray:
    """Pooled occupancy counts on a grid^3 partition of [-1, 1]^3."""
    pts = np.concatenate([as_points(c) for c in clouds], axis=0)
    if np.any(np.abs(pts) > 1.0 + BOX_TOL):
        worst = float(np.abs(pts).max())
        raise NormalizationError(f"points outside [-1, 1]^3 (max |coord| = {worst:.6g}); run normalize_eval first")
    pts = np.clip(pts, -1.0, 1.0)
    hist, _ = np.histogramdd(pts, bins=grid, range=[(-1.0, 1.0)] * 3)
    return hist


def jsd_from_histograms(p: np.ndarray, q: np.ndarray) -> float:
    """JSD(P || Q) in nats of two (unnormalized) histograms."""
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if p.sum() <= 0 or q.sum() <= 0:
        raise MetricError("JSD of an empty histogram")
    p = p / p.sum()
    q = q / q.sum()
    m = 0.5 * (p + q)
    return float(0.5 * entropy(p, m) + 0.5 * entropy(q, m))


def jsd(sg: Sequence[CloudLike], sr: Sequence[CloudLike], grid: int = 28) -> float:
    _check_sets(sg, sr)
    return jsd_from_histograms(voxel_histogram(sg, grid), voxel_histogram(sr, grid))


# ─────────────────────────── normalization ────────────────────────────────

def normalize_eval_cloud(cloud: CloudLike) -> np.ndarray:
    """Center the bounding box and scale uniformly so the widest axis spans [-1, 1]."""
    x = as_points(cloud)
    lo, hi = x.min(axis=0), x.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise NormalizationError("degenerate cloud: zero extent on every axis")
    return (x - 0.5 * (lo + hi)) * (2.0 / extent)


def normalize_eval(clouds: Sequence[CloudLike]) -> List[np.ndarray]:
    return [normalize_eval_cloud(c) for c in clouds]
