"""MetricsReport: evaluation of a generated set against a reference set, and its text forms."""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from config import METRIC_NAMES
from data.cloud import CloudLike, as_points
from metrics.distances import chamfer, emd
from metrics.sets import (
    coverage_from_matrix,
    distance_matrix,
    jsd,
    mmd_from_matrix,
    normalize_eval,
    one_nna_from_matrices,
)
from utils.errors import MetricError
from utils.rng import child_of
from utils.textfmt import format_float, render_key_values, tsv_line

logger = logging.getLogger(__name__)

# Fixed column order of the single-line record.
RECORD_COLUMNS = (
    "n_gen",
    "n_ref",
    "MMD-CD",
    "MMD-EMD",
    "COV-CD",
    "COV-EMD",
    "1-NNA-CD",
    "1-NNA-EMD",
    "JSD",
)


@dataclass
class MetricsReport:
    n_gen: int
    n_ref: int
    values: Dict[str, float] = field(default_factory=dict)

    def to_text(self) -> str:
        pairs = {"n_gen": self.n_gen, "n_ref": self.n_ref}
        pairs.update(self.values)
        return render_key_values(pairs)

    def to_record(self) -> str:
        """Tab-separated values in RECORD_COLUMNS order; metrics not computed are '-'."""
        fields: List[str] = [str(self.n_gen), str(self.n_ref)]
        for col in RECORD_COLUMNS[2:]:
            fields.append(format_float(self.values[col]) if col in self.values else "-")
        return "\t".join(fields) + "\n"

    @staticmethod
    def header() -> str:
        return tsv_line(RECORD_COLUMNS)

    def summary(self) -> str:
        lines = [f"generated={self.n_gen} reference={self.n_ref}"]
        for col in RECORD_COLUMNS[2:]:
            if col in self.values:
                lines.append(f"  {col:<10} {self.values[col]:.6f}")
        return "\n".join(lines)


def parse_metric_list(names: Iterable[str]) -> List[str]:
    names = [n.strip().lower() for n in names if n.strip()]
    unknown = [n for n in names if n not in METRIC_NAMES]
    if unknown:
        raise MetricError(f"unknown metric(s) {', '.join(unknown)}; valid names: {', '.join(METRIC_NAMES)}")
    return names


def evaluate_sets(
    gen: Sequence[CloudLike],
    ref: Sequence[CloudLike],
    metrics: Iterable[str] = METRIC_NAMES,
    grid: int = 28,
    workers: int = 1,
    gen_names: Optional[Sequence[str]] = None,
    ref_names: Optional[Sequence[str]] = None,
    normalize: bool = True,
) -> MetricsReport:
    """Normalize both sets into the unit box and compute the requested metrics.

    ``cd`` / ``emd`` select distance variants, ``mmd`` / ``cov`` / ``1nna`` the
    set metrics computed with each of them. Naming only set metrics implies
    both distances; naming only distances implies all three set metrics.
    """
    names = parse_metric_list(metrics)
    if not gen or not ref:
        raise MetricError(f"empty set (|gen|={len(gen)}, |ref|={len(ref)})")
    if normalize:
        gen, ref = normalize_eval(gen), normalize_eval(ref)
    else:
        gen, ref = [as_points(c) for c in gen], [as_points(c) for c in ref]

    distances = [d for d in ("cd", "emd") if d in names] or ["cd", "emd"]
    set_metrics = [m for m in ("mmd", "cov", "1nna") if m in names]
    if not set_metrics and any(d in names for d in ("cd", "emd")):
        set_metrics = ["mmd", "cov", "1nna"]

    gen_names = list(gen_names) if gen_names else [f"gen[{i}]" for i in range(len(gen))]
    ref_names = list(ref_names) if ref_names else [f"ref[{j}]" for j in range(len(ref))]

    report = MetricsReport(n_gen=len(gen), n_ref=len(ref))
    if set_metrics:
        for dname in distances:
            label = dname.upper()
            dist = chamfer if dname == "cd" else emd
            gr = distance_matrix(gen, ref, dist, workers, gen_names, ref_names)
            if "mmd" in set_metrics:
                report.values[f"MMD-{label}"] = mmd_from_matrix(gr)
            if "cov" in set_metrics:
                report.values[f"COV-{label}"] = coverage_from_matrix(gr)
            if "1nna" in set_metrics:
                gg = distance_matrix(gen, gen, dist, workers, gen_names, gen_names)
                rr = distance_matrix(ref, ref, dist, workers, ref_names, ref_names)
                report.values[f"1-NNA-{label}"] = one_nna_from_matrices(gg, gr, rr)
            logger.info("Computed %s-based metrics over %d x %d clouds", label, len(gen), len(ref))
    if "jsd" in names:
        report.values["JSD"] = jsd(gen, ref, grid)
    return report


def reconstruction_report(
    inputs: Sequence[CloudLike],
    recons: Sequence[CloudLike],
    rng,
    oracle_pairs: Optional[Sequence[Sequence[CloudLike]]] = None,
    with_emd: bool = True,
) -> Dict[str, float]:
    """Mean CD (and EMD) of reconstructions against their inputs.

    Also reports a Gaussian-noise baseline of matching size (one N(0, I)
    cloud per input) and, when given, the oracle bound from pairs of
    independent samplings of the same shape.
    """
    if len(inputs) != len(recons) or not inputs:
        raise MetricError(f"need matching non-empty input/reconstruction lists, got {len(inputs)}/{len(recons)}")
    cds, emds, noise_cds = [], [], []
    for i, (x, r) in enumerate(zip(inputs, recons)):
        x = as_points(x)
        cds.append(chamfer(x, r))
        if with_emd and as_points(r).shape[0] == x.shape[0]:
            emds.append(emd(x, r))
        noise = child_of(rng, "noise", i).standard_normal(x.shape)
        noise_cds.append(chamfer(x, noise))

    out = {
        "recon_cd": float(np.mean(cds)),
        "noise_cd": float(np.mean(noise_cds)),
    }
    out["noise_ratio"] = out["noise_cd"] / out["recon_cd"] if out["recon_cd"] > 0 else math.inf
    if emds:
        out["recon_emd"] = float(np.mean(emds))
    if oracle_pairs:
        out["oracle_cd"] = float(np.mean([chamfer(a, b) for a, b in oracle_pairs]))
    return out
