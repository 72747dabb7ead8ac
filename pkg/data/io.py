"""
Point-cloud files.

XYZ: ASCII, one point per line, three floats separated by single spaces,
     shortest round-trip text, no header. The reader accepts any whitespace
     and skips blank lines.
PLY: binary little-endian, float32 x y z (written); binary or ASCII vertex
     lists with float/double coordinates (read).
"""

import logging
from pathlib import Path
from typing import Iterable, List, Sequence, Union

import numpy as np
from plyfile import PlyData, PlyElement, PlyHeaderParseError, PlyParseError

from data.cloud import CloudLike, PointCloud, as_points
from utils.errors import CloudFormatError, ShapeParamsError
from utils.textfmt import format_float, tsv_line

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CLOUD_SUFFIXES = (".xyz", ".ply")


# ─────────────────────────── XYZ ──────────────────────────────────────────

def write_xyz(path: PathLike, cloud: CloudLike) -> Path:
    path = Path(path)
    pts = as_points(cloud)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [" ".join(format_float(v) for v in row) + "\n" for row in pts]
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.writelines(lines)
    return path


def read_xyz(path: PathLike) -> PointCloud:
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except UnicodeDecodeError as e:
        raise CloudFormatError(str(path), None, f"not ASCII text ({e})") from e
    rows: List[List[float]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 3:
            raise CloudFormatError(str(path), lineno, f"expected 3 values, got {len(tokens)}")
        try:
            row = [float(tok) for tok in tokens]
        except ValueError as e:
            raise CloudFormatError(str(path), lineno, f"not a number: {e}") from e
        if not all(np.isfinite(row)):
            raise CloudFormatError(str(path), lineno, "non-finite coordinate")
        rows.append(row)
    if not rows:
        raise CloudFormatError(str(path), None, "empty cloud")
    return PointCloud(np.array(rows, dtype=np.float64), meta={"path": str(path)})


# ─────────────────────────── PLY ──────────────────────────────────────────

PLY_VERTEX_DTYPE = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4")])


def write_ply(path: PathLike, cloud: CloudLike) -> Path:
    path = Path(path)
    pts = as_points(cloud)
    path.parent.mkdir(parents=True, exist_ok=True)
    vertex = np.empty(pts.shape[0], dtype=PLY_VERTEX_DTYPE)
    for i, axis in enumerate("xyz"):
        vertex[axis] = pts[:, i]
    PlyData([PlyElement.describe(vertex, "vertex")], text=False, byte_order="<").write(str(path))
    return path


def read_ply(path: PathLike) -> PointCloud:
    """Vertex x, y, z of a binary or ASCII PLY file; other elements are ignored."""
    path = Path(path)
    try:
        ply = PlyData.read(str(path))
    except PlyHeaderParseError as e:
        raise CloudFormatError(str(path), e.line, f"bad PLY header: {e}") from e
    except (PlyParseError, ValueError) as e:
        raise CloudFormatError(str(path), None, f"bad PLY data: {e}") from e

    try:
        vertex = ply["vertex"]
    except KeyError as e:
        raise CloudFormatError(str(path), None, "PLY file has no vertex element") from e
    names = vertex.data.dtype.names or ()
    if any(axis not in names for axis in "xyz"):
        raise CloudFormatError(str(path), None, f"vertex element lacks x, y, z (has {', '.join(names)})")
    if vertex.count == 0:
        raise CloudFormatError(str(path), None, "empty cloud")

    pts = np.stack([np.asarray(vertex[axis], dtype=np.float64) for axis in "xyz"], axis=1)
    try:
        return PointCloud(pts, meta={"path": str(path)})
    except ShapeParamsError as e:
        raise CloudFormatError(str(path), None, str(e)) from e


# ─────────────────────────── dispatch ─────────────────────────────────────

def read_cloud(path: PathLike) -> PointCloud:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".ply":
        return read_ply(path)
    if suffix == ".xyz":
        return read_xyz(path)
    raise CloudFormatError(str(path), None, f"unknown cloud format {suffix!r}; expected .xyz or .ply")


def write_cloud(path: PathLike, cloud: CloudLike, fmt: str = "xyz") -> Path:
    if fmt == "xyz":
        return write_xyz(path, cloud)
    if fmt == "ply":
        return write_ply(path, cloud)
    raise ValueError(f"unknown format {fmt!r}; expected xyz or ply")


def list_clouds(directory: PathLike) -> List[Path]:
    """Cloud files of a directory, or those listed in its manifest.tsv when present."""
    directory = Path(directory)
    manifest = directory / "manifest.tsv"
    if manifest.exists():
        rows = read_tsv(manifest)
        return [directory / row["path"] for row in rows]
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in CLOUD_SUFFIXES)


def write_tsv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(tsv_line(header))
        for row in rows:
            f.write(tsv_line(row))
    return path


def read_tsv(path: PathLike) -> List[dict]:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise CloudFormatError(str(path), None, "empty manifest")
    header = lines[0].split("\t")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        values = line.split("\t")
        if len(values) != len(header):
            raise CloudFormatError(str(path), lineno, f"expected {len(header)} columns, got {len(values)}")
        rows.append(dict(zip(header, values)))
    return rows
