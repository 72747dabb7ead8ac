#!/usr/bin/env python3
"""
End-to-end toy benchmark: auto-encoding, generation and interpolation on the
synthetic dataset, with the bounds a healthy build should meet.

Checks:
- autoencoding   reconstruction CD on the test split beats a Gaussian-noise
                 cloud by >= 5x (overall and on spheres); the two-sampling
                 lower bound is reported alongside; late training loss < 0.35
- generation     generated vs held-out: 1-NNA-CD in [0.5, 0.8] and ~1.0 for
                 the untrained model, COV-CD >= 0.4, JSD >= 3x below untrained
- interpolation  endpoints equal standalone reconstructions; CD to the endpoint
                 reconstructions is monotone in lambda in >= 80% of steps and
                 consecutive frames stay within CD(first, last) in >= 90%

Usage:
    python scripts/toy_benchmark.py --out runs/bench                  # default steps
    python scripts/toy_benchmark.py --out runs/bench --set steps=500  # quick look
    python scripts/toy_benchmark.py --out runs/bench --check-determinism
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
from dotenv import load_dotenv

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from config import RunConfig, load_run_config  # noqa: E402
from data.dataset import Dataset, DatasetEntry, make_dataset, oracle_pairs  # noqa: E402
from data.io import read_tsv  # noqa: E402
from metrics.distances import chamfer  # noqa: E402
from metrics.report import evaluate_sets, reconstruction_report  # noqa: E402
from pipeline.checkpoint import Checkpoint  # noqa: E402
from pipeline.sampling import Sampler  # noqa: E402
from pipeline.train import Trainer  # noqa: E402
from utils.rng import RngStream  # noqa: E402
from utils.textfmt import render_key_values  # noqa: E402

load_dotenv(Path(__file__).parent.parent / ".env")

logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")
logger = logging.getLogger(__name__)

NOISE_RATIO_MIN = 5.0
LOSS_BOUND = 0.35
ONE_NNA_RANGE = (0.5, 0.8)
UNTRAINED_ONE_NNA_MIN = 0.95
COVERAGE_MIN = 0.4
JSD_IMPROVEMENT_MIN = 3.0
MONOTONE_MIN = 0.8
SMOOTH_MIN = 0.9


def _with_mode(cfg: RunConfig, mode: str) -> RunConfig:
    cfg = RunConfig.from_text(cfg.to_text())
    cfg.train.mode = mode
    return cfg


def _train(cfg: RunConfig, dataset: Dataset, mode: str, out: Path) -> Checkpoint:
    trainer = Trainer(_with_mode(cfg, mode), dataset.clouds("train"), dataset.clouds("val"))
    return trainer.run(trace_path=out.with_name(out.name + ".trace.tsv"), checkpoint_path=out)


def late_loss(trace_path: Path, fraction: float = 0.1) -> float:
    """Mean diffusion loss over the last ``fraction`` of logged steps."""
    rows = read_tsv(trace_path)
    tail = rows[-max(1, int(len(rows) * fraction)):]
    return float(np.mean([float(r["loss_diff"]) for r in tail]))


def autoencoding_benchmark(cfg: RunConfig, dataset: Dataset, out_dir: Path) -> Dict[str, float]:
    ckpt_path = out_dir / "ae.ckpt"
    ckpt = _train(cfg, dataset, "autoencoder", ckpt_path)
    sampler = Sampler.from_checkpoint(ckpt)
    test: List[DatasetEntry] = dataset.split("test")
    n_points = cfg.data.n_points
    root = RngStream(cfg.train.seed).child("benchmark", "recon")

    recons = [sampler.reconstruct(e.points, n_points, root.child(i)) for i, e in enumerate(test)]
    pairs = oracle_pairs(test, n_points, cfg.data)
    result = reconstruction_report([e.points for e in test], recons, root.child("noise"), pairs)

    spheres = [i for i, e in enumerate(test) if e.family == "sphere"]
    if spheres:
        sphere = reconstruction_report(
            [test[i].points for i in spheres], [recons[i] for i in spheres], root.child("sphere-noise"),
            with_emd=False,
        )
        result["sphere_noise_ratio"] = sphere["noise_ratio"]
    result["late_loss"] = late_loss(ckpt_path.with_name(ckpt_path.name + ".trace.tsv"))
    logger.info(
        "Auto-encoding: recon CD %.4f, noise CD %.4f (%.1fx), oracle CD %.4f, late loss %.4f",
        result["recon_cd"], result["noise_cd"], result["noise_ratio"], result["oracle_cd"], result["late_loss"],
    )
    return result


def generation_benchmark(cfg: RunConfig, dataset: Dataset, out_dir: Path) -> Dict[str, float]:
    ckpt = _train(cfg, dataset, "generator", out_dir / "gen.ckpt")
    untrained = Trainer(_with_mode(cfg, "generator"), dataset.clouds("train")).checkpoint()

    held_out = dataset.clouds("test") + dataset.clouds("val")
    n = len(held_out)
    rng = RngStream(cfg.train.seed).child("benchmark", "generate")
    metrics = ["cd", "jsd"]
    grid, workers = cfg.eval.jsd_grid, cfg.eval.workers

    trained_set = Sampler.from_checkpoint(ckpt).generate(n, cfg.data.n_points, rng)
    untrained_set = Sampler.from_checkpoint(untrained).generate(n, cfg.data.n_points, rng)
    trained = evaluate_sets(trained_set, held_out, metrics, grid, workers).values
    baseline = evaluate_sets(untrained_set, held_out, metrics, grid, workers).values

    result = {
        "n_eval": float(n),
        "one_nna_cd": trained["1-NNA-CD"],
        "cov_cd": trained["COV-CD"],
        "mmd_cd": trained["MMD-CD"],
        "jsd": trained["JSD"],
        "untrained_one_nna_cd": baseline["1-NNA-CD"],
        "untrained_jsd": baseline["JSD"],
    }
    logger.info(
        "Generation over %d clouds: 1-NNA-CD %.3f (untrained %.3f), COV-CD %.3f, JSD %.4f (untrained %.4f)",
        n, result["one_nna_cd"], result["untrained_one_nna_cd"], result["cov_cd"], result["jsd"],
        result["untrained_jsd"],
    )
    return result


def interpolation_benchmark(ckpt: Checkpoint, clouds: Sequence[np.ndarray], seed: int, steps: int = 8) -> Dict[str, float]:
    """Frame statistics over consecutive pairs of the given clouds."""
    sampler = Sampler.from_checkpoint(ckpt)
    monotone, smooth, total = 0, 0, 0
    endpoints_exact = True
    for i in range(0, len(clouds) - 1, 2):
        a, b = clouds[i], clouds[i + 1]
        rng = RngStream(seed).child("benchmark", "interp", i)
        _, frames = sampler.interpolate(a, b, steps, 0.0, a.shape[0], rng)
        rec_a = sampler.reconstruct(a, a.shape[0], rng)
        rec_b = sampler.reconstruct(b, b.shape[0], rng)
        endpoints_exact &= bool(np.array_equal(frames[0], rec_a) and np.array_equal(frames[-1], rec_b))

        to_a = [chamfer(f, rec_a) for f in frames]
        to_b = [chamfer(f, rec_b) for f in frames]
        span = chamfer(frames[0], frames[-1])
        for k in range(steps - 1):
            total += 1
            monotone += int(to_a[k + 1] >= to_a[k] and to_b[k + 1] <= to_b[k])
            smooth += int(chamfer(frames[k], frames[k + 1]) <= span)
    result = {
        "endpoints_exact": float(endpoints_exact),
        "monotone_fraction": monotone / total if total else 0.0,
        "smooth_fraction": smooth / total if total else 0.0,
    }
    logger.info(
        "Interpolation: monotone %.2f, smooth %.2f, endpoints exact %s",
        result["monotone_fraction"], result["smooth_fraction"], endpoints_exact,
    )
    return result


def check(results: Dict[str, float]) -> List[str]:
    """Names of the bounds that failed."""
    failures = []
    bounds = [
        ("noise_ratio", results.get("noise_ratio", 0.0) >= NOISE_RATIO_MIN),
        ("sphere_noise_ratio", results.get("sphere_noise_ratio", NOISE_RATIO_MIN) >= NOISE_RATIO_MIN),
        ("late_loss", results.get("late_loss", np.inf) < LOSS_BOUND),
        ("one_nna_cd", ONE_NNA_RANGE[0] <= results.get("one_nna_cd", -1.0) <= ONE_NNA_RANGE[1]),
        ("untrained_one_nna_cd", results.get("untrained_one_nna_cd", 0.0) >= UNTRAINED_ONE_NNA_MIN),
        ("cov_cd", results.get("cov_cd", 0.0) >= COVERAGE_MIN),
        ("jsd", results.get("jsd", np.inf) * JSD_IMPROVEMENT_MIN <= results.get("untrained_jsd", 0.0)),
        ("endpoints_exact", results.get("endpoints_exact", 0.0) == 1.0),
        ("monotone_fraction", results.get("monotone_fraction", 0.0) >= MONOTONE_MIN),
        ("smooth_fraction", results.get("smooth_fraction", 0.0) >= SMOOTH_MIN),
    ]
    for name, ok in bounds:
        if not ok:
            failures.append(name)
    return failures


def run_benchmark(cfg: RunConfig, out: Path) -> Dict[str, float]:
    """Sample the dataset under ``out`` and run all three benchmarks."""
    out.mkdir(parents=True, exist_ok=True)
    dataset = make_dataset(cfg.data, cfg.train.seed, out / "data")
    results: Dict[str, float] = {}
    results.update(autoencoding_benchmark(cfg, dataset, out))
    results.update(generation_benchmark(cfg, dataset, out))
    gen = Checkpoint.load(out / "gen.ckpt")
    results.update(interpolation_benchmark(gen, dataset.clouds("test"), cfg.train.seed))
    return results


def main():
    parser = argparse.ArgumentParser(description="Toy-scale end-to-end benchmark")
    parser.add_argument("--out", required=True, help="Working directory for data, checkpoints and results")
    parser.add_argument("--config", help="Run-config file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    parser.add_argument("--check-determinism", action="store_true",
                        help="Retrain the generator and compare checkpoint bytes")
    args = parser.parse_args()

    cfg = load_run_config(args.config, args.set)
    out = Path(args.out)
    results = run_benchmark(cfg, out)

    if args.check_determinism:
        dataset = make_dataset(cfg.data, cfg.train.seed)
        again = _train(cfg, dataset, "generator", out / "gen_again.ckpt")
        results["deterministic"] = float(again.to_bytes() == Checkpoint.load(out / "gen.ckpt").to_bytes())
        logger.info("Generator rerun byte-identical: %s", bool(results["deterministic"]))

    (out / "benchmark.txt").write_text(cfg.to_text() + render_key_values(results), encoding="utf-8")
    failures = check(results)
    if args.check_determinism and not results["deterministic"]:
        failures.append("deterministic")
    if failures:
        logger.error("Bounds not met: %s", ", ".join(failures))
        sys.exit(1)
    logger.info("All bounds met; results in %s", out / "benchmark.txt")


if __name__ == "__main__":
    main()
