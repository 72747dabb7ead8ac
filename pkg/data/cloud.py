"""PointCloud record and the training-time normalization contract."""

from dataclasses import dataclass, field
from typing import Any, Dict, Union

import numpy as np

from utils.errors import NormalizationError, ShapeParamsError

NORMALIZE_TOL = 1e-9


@dataclass
class PointCloud:
    """N x 3 float64 points plus free-form metadata (family, split, seed, path)."""

    points: np.ndarray
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ShapeParamsError(f"point cloud must be N x 3 with N >= 1, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ShapeParamsError("point cloud has non-finite coordinates")
        self.points = pts

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def __len__(self) -> int:
        return self.n


CloudLike = Union[PointCloud, np.ndarray]


def as_points(cloud: CloudLike) -> np.ndarray:
    """N x 3 array view of a PointCloud or array."""
    if isinstance(cloud, PointCloud):
        return cloud.points
    return np.asarray(cloud, dtype=np.float64)


def normalize_train(cloud: CloudLike, per_axis: bool = False) -> np.ndarray:
    """Zero centroid and unit pooled variance over all 3N coordinates.

    A single scale keeps the shape's aspect ratio. ``per_axis`` whitens each
    coordinate separately instead.
    """
    x = as_points(cloud)
    if x.shape[0] < 2:
        raise NormalizationError(f"normalization needs at least 2 points, got {x.shape[0]}")
    centered = x - x.mean(axis=0, keepdims=True)
    if per_axis:
        std = np.sqrt(np.mean(centered * centered, axis=0, keepdims=True))
        if np.any(std <= 0):
            raise NormalizationError("zero variance along at least one axis")
        return centered / std
    std = float(np.sqrt(np.mean(centered * centered)))
    if std <= 0:
        raise NormalizationError("zero-variance cloud cannot be normalized")
    return centered / std


def is_train_normalized(cloud: CloudLike, tol: float = NORMALIZE_TOL) -> bool:
    x = as_points(cloud)
    centroid_ok = np.all(np.abs(x.mean(axis=0)) <= tol)
    variance_ok = abs(float(np.mean((x - x.mean(axis=0)) ** 2)) - 1.0) <= tol
    return bool(centroid_ok and variance_ok)


def rotate_about_gravity(x: np.ndarray, angle: float) -> np.ndarray:
    """Rotate about the z (gravity) axis."""
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return x @ rot.T
