"""
Parametric shape families used as synthetic training data.

sphere   radius                    area-uniform on the surface
torus    major R, minor r (r < R)  area-uniform via rejection on the minor angle
plane    width, height             uniform on an axis-aligned rectangle (z = 0)
cluster  k lobes, spread           isotropic Gaussian mixture around random centers
"""

import logging
import math
from typing import Any, Dict, Tuple

import numpy as np

from utils.errors import ShapeParamsError

logger = logging.getLogger(__name__)

PARAM_RANGES: Dict[str, Dict[str, Tuple[float, float]]] = {
    "sphere": {"radius": (0.5, 1.5)},
    "torus": {"major": (0.8, 1.2), "minor": (0.15, 0.4)},
    "plane": {"width": (0.5, 2.0), "height": (0.5, 2.0)},
    "cluster": {"spread": (0.05, 0.2)},
}

# cluster centers are drawn uniformly from [-CENTER_BOX, CENTER_BOX]^3
CENTER_BOX = 1.0

FAMILY_NAMES = tuple(PARAM_RANGES)


def sample_params(family: str, rng, lobes: int = 2) -> Dict[str, Any]:
    """Draw shape parameters uniformly within the family's declared ranges."""
    if family not in PARAM_RANGES:
        raise ShapeParamsError(f"unknown shape family {family!r}; expected one of {FAMILY_NAMES}")
    ranges = PARAM_RANGES[family]
    if family == "cluster":
        lo, hi = ranges["spread"]
        return {
            "lobes": int(lobes),
            "spread": float(rng.uniform(lo, hi)),
            "centers": rng.uniform(-CENTER_BOX, CENTER_BOX, size=(int(lobes), 3)),
        }
    return {name: float(rng.uniform(lo, hi)) for name, (lo, hi) in ranges.items()}


def validate_params(family: str, params: Dict[str, Any]) -> None:
    if family not in PARAM_RANGES:
        raise ShapeParamsError(f"unknown shape family {family!r}; expected one of {FAMILY_NAMES}")
    for name, (lo, hi) in PARAM_RANGES[family].items():
        if name not in params:
            raise ShapeParamsError(f"{family}: missing parameter {name!r}")
        value = params[name]
        if not (lo <= value <= hi):
            raise ShapeParamsError(f"{family}: {name}={value} outside [{lo}, {hi}]")
    if family == "torus" and params["minor"] >= params["major"]:
        raise ShapeParamsError("torus: minor radius must be smaller than the major radius")
    if family == "cluster":
        lobes = int(params.get("lobes", 0))
        centers = np.asarray(params.get("centers", np.empty((0, 3))), dtype=np.float64)
        if lobes < 1 or centers.shape != (lobes, 3):
            raise ShapeParamsError(f"cluster: need {lobes} >= 1 centers of shape (lobes, 3), got {centers.shape}")


def _sphere(params, n: int, rng) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    return params["radius"] * v / norms


def _torus(params, n: int, rng) -> np.ndarray:
    major, minor = params["major"], params["minor"]
    phis = []
    accepted = 0
    # acceptance rate is at least (R - r) / (R + r); draw in blocks until full
    while accepted < n:
        block = max(2 * (n - accepted), 16)
        phi = rng.uniform(0.0, 2.0 * math.pi, size=block)
        u = rng.uniform(0.0, 1.0, size=block)
        keep = phi[u <= (major + minor * np.cos(phi)) / (major + minor)]
        phis.append(keep)
        accepted += keep.size
    phi = np.concatenate(phis)[:n]
    theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
    ring = major + minor * np.cos(phi)
    return np.stack([ring * np.cos(theta), ring * np.sin(theta), minor * np.sin(phi)], axis=1)


def _plane(params, n: int, rng) -> np.ndarray:
    x = rng.uniform(-0.5 * params["width"], 0.5 * params["width"], size=n)
    y = rng.uniform(-0.5 * params["height"], 0.5 * params["height"], size=n)
    return np.stack([x, y, np.zeros(n)], axis=1)


def _cluster(params, n: int, rng) -> np.ndarray:
    centers = np.asarray(params["centers"], dtype=np.float64)
    which = rng.integers(0, centers.shape[0], size=n)
    return centers[which] + params["spread"] * rng.standard_normal((n, 3))


_SAMPLERS = {"sphere": _sphere, "torus": _torus, "plane": _plane, "cluster": _cluster}


def sample_shape(family: str, params: Dict[str, Any], n_points: int, rng) -> np.ndarray:
    """Exactly n_points i.i.d. surface (or mixture) samples, before normalization."""
    validate_params(family, params)
    if n_points < 1:
        raise ShapeParamsError(f"n_points must be >= 1, got {n_points}")
    pts = _SAMPLERS[family](params, int(n_points), rng)
    assert pts.shape == (n_points, 3)
    return pts
