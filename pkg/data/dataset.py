"""
Synthetic datasets: generation, on-disk layout and loading.

Layout::

    <root>/manifest.tsv            path  family  split  seed
    <root>/{train,val,test}/<index>.xyz

``seed`` is the cloud's own stream seed: its parameters come from
``RngStream(seed).child("params")`` and its k-th point sampling from
``.child("points", k)`` (k = 0 is the stored cloud), so any shape can be
resampled from the manifest alone.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import DataConfig
from data.cloud import is_train_normalized, normalize_train
from data.io import read_tsv, read_xyz, write_tsv, write_xyz
from data.shapes import sample_params, sample_shape
from metrics.distances import chamfer
from utils.errors import NormalizationError
from utils.rng import RngStream

logger = logging.getLogger(__name__)

SPLITS = ("train", "test", "val")
MANIFEST_COLUMNS = ("path", "family", "split", "seed")


@dataclass
class DatasetEntry:
    index: int
    family: str
    split: str
    seed: int
    points: np.ndarray
    path: str = ""


@dataclass
class Dataset:
    entries: List[DatasetEntry] = field(default_factory=list)
    root: Optional[Path] = None

    def __len__(self) -> int:
        return len(self.entries)

    def split(self, name: str) -> List[DatasetEntry]:
        return [e for e in self.entries if e.split == name]

    def clouds(self, name: str) -> List[np.ndarray]:
        return [e.points for e in self.split(name)]

    def split_sizes(self) -> Dict[str, int]:
        return {name: len(self.split(name)) for name in SPLITS}


def split_sizes(n: int, train: float, test: float, val: float) -> Tuple[int, int, int]:
    """Floor the test and val shares; the remainder goes to train."""
    n_test = int(math.floor(n * test + 1e-9))
    n_val = int(math.floor(n * val + 1e-9))
    return n - n_test - n_val, n_test, n_val


def sample_cloud(
    family: str, seed: int, n_points: int, sampling: int = 0, lobes: int = 2, per_axis: bool = False
) -> np.ndarray:
    """Normalized cloud for (family, cloud seed); ``sampling`` picks an independent point draw."""
    stream = RngStream(seed)
    params = sample_params(family, stream.child("params"), lobes=lobes)
    pts = sample_shape(family, params, n_points, stream.child("points", sampling))
    return normalize_train(pts, per_axis=per_axis)


def make_dataset(cfg: DataConfig, seed: int, out_dir: Optional[Path] = None) -> Dataset:
    """Sample cfg.n_clouds clouds round-robin over families, split them and optionally write them."""
    root = RngStream(seed)
    n = cfg.n_clouds
    n_train, n_test, n_val = split_sizes(n, cfg.split_train, cfg.split_test, cfg.split_val)
    order = root.child("split").permutation(n)
    split_of = {}
    for rank, idx in enumerate(order):
        if rank < n_train:
            split_of[int(idx)] = "train"
        elif rank < n_train + n_test:
            split_of[int(idx)] = "test"
        else:
            split_of[int(idx)] = "val"

    entries = []
    for i in range(n):
        family = cfg.families[i % len(cfg.families)]
        cloud_seed = root.child("cloud", i).derived_seed()
        pts = sample_cloud(family, cloud_seed, cfg.n_points, 0, cfg.cluster_lobes, cfg.normalize_per_axis)
        split = split_of[i]
        entries.append(DatasetEntry(i, family, split, cloud_seed, pts, f"{split}/{i}.xyz"))

    dataset = Dataset(entries=entries)
    logger.info(
        "Sampled %d clouds of %d points (train/test/val = %d/%d/%d)",
        n, cfg.n_points, n_train, n_test, n_val,
    )
    if out_dir is not None:
        write_dataset(dataset, out_dir)
    return dataset


def write_dataset(dataset: Dataset, out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    for entry in dataset.entries:
        write_xyz(out_dir / entry.path, entry.points)
    manifest = write_tsv(
        out_dir / "manifest.tsv",
        MANIFEST_COLUMNS,
        ([e.path, e.family, e.split, e.seed] for e in dataset.entries),
    )
    dataset.root = out_dir
    logger.info("Wrote %d clouds and %s", len(dataset), manifest)
    return manifest


def load_dataset(root: Path, check_normalized: bool = True) -> Dataset:
    """Read a dataset directory via its manifest, checking the normalization contract."""
    root = Path(root)
    entries = []
    for row in read_tsv(root / "manifest.tsv"):
        cloud = read_xyz(root / row["path"])
        if check_normalized and not is_train_normalized(cloud):
            raise NormalizationError(f"{root / row['path']}: cloud is not zero-mean / unit-variance")
        index = int(Path(row["path"]).stem) if Path(row["path"]).stem.isdigit() else len(entries)
        entries.append(
            DatasetEntry(index, row["family"], row["split"], int(row["seed"]), cloud.points, row["path"])
        )
    logger.info("Loaded %d clouds from %s", len(entries), root)
    return Dataset(entries=entries, root=root)


def oracle_pairs(
    entries: Sequence[DatasetEntry], n_points: int, cfg: Optional[DataConfig] = None
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Two independent samplings (k = 1, 2) of each entry's exact shape."""
    cfg = cfg or DataConfig()
    return [
        tuple(
            sample_cloud(e.family, e.seed, n_points, k, cfg.cluster_lobes, cfg.normalize_per_axis)
            for k in (1, 2)
        )
        for e in entries
    ]


def oracle_reconstruction_cd(
    entries: Sequence[DatasetEntry], n_points: int, cfg: Optional[DataConfig] = None
) -> float:
    """Lower bound on reconstruction CD: mean CD between two samplings of the same shape."""
    pairs = oracle_pairs(entries, n_points, cfg)
    return float(np.mean([chamfer(a, b) for a, b in pairs]))


