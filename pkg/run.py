#!/usr/bin/env python3
"""
Command-line entry point for the point-cloud diffusion toolkit.

Subcommands:
    make-data        sample the synthetic dataset
    train-gen        train the generator (encoder + flow prior + denoiser)
    train-ae         train the auto-encoder (encoder + denoiser)
    sample           generate clouds from a generator checkpoint
    reconstruct      encode a cloud and decode it again
    interpolate      decode a latent path between two clouds
    evaluate         MMD / COV / 1-NNA / JSD of a generated set vs a reference set
    forward-diffuse  snapshots of the forward noising chain

Usage:
    python run.py make-data --config runs/toy.cfg --out data/toy
    python run.py train-ae --data data/toy --config runs/toy.cfg --out runs/ae.ckpt
    python run.py sample --ckpt runs/gen.ckpt --n 16 --points 128 --out runs/samples

Exit codes: 0 success, 1 other error, 2 usage, 3 training diverged,
4 checkpoint of the wrong mode.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

try:
    import setproctitle
except ImportError:
    setproctitle = None

from config import METRIC_NAMES, RunConfig, load_run_config
from data.cloud import as_points, is_train_normalized
from data.dataset import load_dataset, make_dataset
from data.io import read_cloud, read_tsv, write_cloud, write_tsv
from metrics.report import MetricsReport, evaluate_sets, parse_metric_list, reconstruction_report
from pipeline.checkpoint import Checkpoint
from pipeline.diffusion import forward_chain, make_schedule
from pipeline.sampling import Sampler
from pipeline.train import Trainer
from utils.errors import DivergenceError, MetricError, ModeMismatchError, PointDiffusionError
from utils.rng import RngStream
from utils.textfmt import format_float, render_key_values

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_MODE = 4

RUN_CONFIG_NAME = "run_config.txt"
MANIFEST_NAME = "manifest.tsv"


# ─────────────────────────── helpers ──────────────────────────────────────

def _setup_logging(verbose: bool, log_file: Optional[str]) -> None:
    level = logging.DEBUG if verbose else logging.INFO
    fmt = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    logging.basicConfig(level=level, format=fmt)
    root = logging.getLogger()
    root.setLevel(level)
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        handler = logging.FileHandler(log_file)
        handler.setFormatter(logging.Formatter(fmt))
        root.addHandler(handler)


def _config(args, base: Optional[RunConfig] = None) -> RunConfig:
    """Effective config: base (or defaults + env), then --config, --set, --seed, --steps."""
    if base is None:
        return load_run_config(args.config, args.set, args.seed, getattr(args, "steps", None))
    cfg = RunConfig.from_text(base.to_text(), source="<checkpoint>")
    if args.config:
        cfg.apply_file(args.config)
    cfg.apply_overrides(args.set)
    if args.seed is not None:
        cfg.train.seed = int(args.seed)
    return cfg.validate()


def _write_run_config(directory: Path, cfg: RunConfig, command: str, inputs: Sequence[str] = ()) -> Path:
    """Echo the effective config into an output directory; the file is itself a valid --config."""
    directory.mkdir(parents=True, exist_ok=True)
    header = [f"# command: {command}"] + [f"# input: {item}" for item in inputs]
    path = directory / RUN_CONFIG_NAME
    path.write_text("\n".join(header) + "\n" + cfg.to_text(), encoding="utf-8")
    return path


def _cloud_format(path: Path) -> str:
    return "ply" if path.suffix.lower() == ".ply" else "xyz"


def _read_set(directory: Path, split: Optional[str] = None):
    """(names, clouds) of a directory, optionally restricted to one manifest split."""
    manifest = directory / MANIFEST_NAME
    if manifest.exists():
        rows = read_tsv(manifest)
        if split is not None:
            rows = [r for r in rows if r.get("split") == split]
        paths = [directory / r["path"] for r in rows]
    else:
        if split is not None:
            raise MetricError(f"{directory}: --ref-split needs a {MANIFEST_NAME}")
        paths = sorted(p for p in directory.iterdir() if p.suffix.lower() in (".xyz", ".ply"))
    if not paths:
        raise MetricError(f"{directory}: no clouds found")
    names = [p.relative_to(directory).as_posix() for p in paths]
    return names, [read_cloud(p).points for p in paths]


def _metric_list(raw: str) -> List[str]:
    try:
        return parse_metric_list(raw.split(","))
    except MetricError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def _sampler(ckpt: Checkpoint, cfg: RunConfig) -> Sampler:
    tc = cfg.train
    return Sampler(ckpt.build_model(), ckpt.schedule, ckpt.mode, tc.reverse_variance, tc.interp_space)


# ─────────────────────────── commands ─────────────────────────────────────

def cmd_make_data(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    dataset = make_dataset(cfg.data, cfg.train.seed, out)
    _write_run_config(out, cfg, "make-data")
    sizes = dataset.split_sizes()
    print(f"wrote {len(dataset)} clouds to {out} "
          f"(train={sizes['train']} test={sizes['test']} val={sizes['val']})")
    return EXIT_OK


def _cmd_train(args, mode: str) -> int:
    out = Path(args.out)
    dataset = load_dataset(Path(args.data))
    train_clouds = dataset.clouds("train")
    val_clouds = dataset.clouds("val")

    if args.resume and out.exists():
        ckpt = Checkpoint.load(out)
        if ckpt.mode != mode:
            raise ModeMismatchError(f"{out}: cannot resume a {ckpt.mode} checkpoint in {mode} mode")
        cfg = _config(args, base=ckpt.config)
        if args.steps is not None:
            cfg.train.steps = int(args.steps)
        ckpt.config = cfg
        trainer = Trainer.from_checkpoint(ckpt, train_clouds, val_clouds)
        logger.info("Resuming %s from step %d", out, ckpt.step)
    else:
        cfg = _config(args)
        cfg.train.mode = mode
        cfg.validate()
        trainer = Trainer(cfg, train_clouds, val_clouds)

    trace = Path(args.trace) if args.trace else out.with_name(out.name + ".trace.tsv")
    _write_run_config(out.parent, cfg, f"train-{'gen' if mode == 'generator' else 'ae'}", [args.data])
    ckpt = trainer.run(trace_path=trace, checkpoint_path=out)

    rec = trainer.last_record
    if rec:
        print(
            f"final step={ckpt.step} loss={format_float(rec['loss_total'])} "
            f"diff={format_float(rec['loss_diff'])} latent={format_float(rec['loss_latent'])}"
        )
    else:
        print(f"final step={ckpt.step} (no steps taken)")
    return EXIT_OK


def cmd_train_gen(args) -> int:
    return _cmd_train(args, "generator")


def cmd_train_ae(args) -> int:
    return _cmd_train(args, "autoencoder")


def cmd_sample(args) -> int:
    ckpt = Checkpoint.load(args.ckpt)
    if ckpt.mode != "generator":
        raise ModeMismatchError("generator checkpoint required")
    cfg = _config(args, base=ckpt.config)
    n_points = args.points or cfg.data.n_points
    out = Path(args.out)

    clouds = _sampler(ckpt, cfg).generate(args.n, n_points, RngStream(cfg.train.seed))
    rows = []
    for i, cloud in enumerate(clouds):
        name = f"sample_{i:04d}.{args.format}"
        write_cloud(out / name, cloud, args.format)
        rows.append([name, i, n_points])
    write_tsv(out / MANIFEST_NAME, ("path", "index", "n_points"), rows)
    _write_run_config(out, cfg, "sample", [args.ckpt])
    print(f"wrote {len(clouds)} clouds of {n_points} points to {out}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    ckpt = Checkpoint.load(args.ckpt)
    cfg = _config(args, base=ckpt.config)
    x0 = read_cloud(args.inp).points
    if not is_train_normalized(x0):
        logger.warning("%s is not zero-mean / unit-variance; the encoder expects normalized input", args.inp)
    n_points = args.points or x0.shape[0]
    out = Path(args.out)

    root = RngStream(cfg.train.seed)
    recon = _sampler(ckpt, cfg).reconstruct(x0, n_points, root)
    write_cloud(out, recon, _cloud_format(out))
    _write_run_config(out.parent, cfg, "reconstruct", [args.ckpt, args.inp])

    stats = reconstruction_report([x0], [recon], root.child("baseline"), with_emd=n_points == x0.shape[0])
    print(render_key_values(stats), end="")
    return EXIT_OK


def cmd_interpolate(args) -> int:
    ckpt = Checkpoint.load(args.ckpt)
    cfg = _config(args, base=ckpt.config)
    a = read_cloud(args.a).points
    b = read_cloud(args.b).points
    n_points = args.points or a.shape[0]
    out = Path(args.out)

    lams, frames = _sampler(ckpt, cfg).interpolate(
        a, b, args.steps, args.extrapolate, n_points, RngStream(cfg.train.seed)
    )
    rows = []
    for k, (lam, frame) in enumerate(zip(lams, frames)):
        name = f"frame_{k:03d}.xyz"
        write_cloud(out / name, frame)
        rows.append([name, k, float(lam)])
    write_tsv(out / MANIFEST_NAME, ("path", "frame", "lambda"), rows)
    _write_run_config(out, cfg, "interpolate", [args.ckpt, args.a, args.b])
    print(f"wrote {len(frames)} frames to {out} (lambda {format_float(lams[0])} .. {format_float(lams[-1])})")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    metrics = args.metrics or list(cfg.eval.metrics)
    grid = args.grid or cfg.eval.jsd_grid
    workers = args.workers or cfg.eval.workers

    gen_names, gen = _read_set(Path(args.gen))
    ref_names, ref = _read_set(Path(args.ref), args.ref_split)
    report = evaluate_sets(gen, ref, metrics, grid, workers, gen_names, ref_names)

    print(report.summary())
    print(MetricsReport.header() + report.to_record(), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
        (out / "record.tsv").write_text(MetricsReport.header() + report.to_record(), encoding="utf-8")
        _write_run_config(out, cfg, "evaluate", [args.gen, args.ref])
    return EXIT_OK


def cmd_forward_diffuse(args) -> int:
    overrides = list(args.set)
    if args.T is not None:
        overrides.append(f"T={args.T}")
    args.set = overrides
    cfg = _config(args)
    T = cfg.train.T
    if not 1 <= args.every <= T:
        args.parser.error(f"--every must lie in [1, T={T}], got {args.every}")

    x0 = as_points(read_cloud(args.inp))
    sched = make_schedule(T, cfg.train.beta_start, cfg.train.beta_end)
    chain = forward_chain(x0, sched, RngStream(cfg.train.seed).child("forward"))
    out = Path(args.out)

    snapshots = sorted(set(range(0, T + 1, args.every)) | {T})
    rows = []
    for t in snapshots:
        name = f"t{t:04d}.xyz"
        write_cloud(out / name, x0 if t == 0 else chain[t - 1])
        rows.append([name, t, float(sched.alpha_bar_at(t))])
    write_tsv(out / MANIFEST_NAME, ("path", "t", "alpha_bar"), rows)
    _write_run_config(out, cfg, "forward-diffuse", [args.inp])
    last = chain[-1]
    print(f"wrote {len(snapshots)} snapshots to {out} "
          f"(x^T per-axis variance {', '.join(format_float(float(v)) for v in np.var(last, axis=0))})")
    return EXIT_OK


# ─────────────────────────── parser ───────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Run-config file (key=value lines)")
    common.add_argument("--seed", type=int, help="Root seed (overrides the config)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="Override one config key; repeatable")
    common.add_argument("--verbose", action="store_true", help="DEBUG logging")
    common.add_argument("--log-file", help="Also log to this file")

    parser = argparse.ArgumentParser(
        description="Point-cloud diffusion toolkit",
        epilog="exit codes: 0 ok, 1 error, 2 usage, 3 diverged, 4 wrong checkpoint mode",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def add(name: str, func, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=func, parser=p)
        return p

    p = add("make-data", cmd_make_data, "Sample the synthetic dataset")
    p.add_argument("--out", required=True, help="Dataset directory")

    for name, func, help_text in (
        ("train-gen", cmd_train_gen, "Train the generator"),
        ("train-ae", cmd_train_ae, "Train the auto-encoder"),
    ):
        p = add(name, func, help_text)
        p.add_argument("--data", required=True, help="Dataset directory (from make-data)")
        p.add_argument("--out", required=True, help="Checkpoint file")
        p.add_argument("--steps", type=int, help="Total training steps (overrides the config)")
        p.add_argument("--trace", help="Loss trace file (default: <out>.trace.tsv)")
        p.add_argument("--resume", action="store_true", help="Continue from --out if it exists")

    p = add("sample", cmd_sample, "Generate clouds from a generator checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n", type=int, default=16, help="Number of clouds")
    p.add_argument("--points", type=int, help="Points per cloud (default: n_points)")
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument("--format", choices=("xyz", "ply"), default="xyz")

    p = add("reconstruct", cmd_reconstruct, "Encode and decode one cloud")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="inp", required=True, help="Input cloud (.xyz or .ply)")
    p.add_argument("--out", required=True, help="Output cloud (.xyz or .ply)")
    p.add_argument("--points", type=int, help="Points to decode (default: as many as the input)")

    p = add("interpolate", cmd_interpolate, "Decode a latent path between two clouds")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--a", required=True, help="First cloud")
    p.add_argument("--b", required=True, help="Second cloud")
    p.add_argument("--steps", type=int, required=True, help="Number of frames (>= 2)")
    p.add_argument("--extrapolate", type=float, default=0.0, help="Margin m: lambda runs over [-m, 1+m]")
    p.add_argument("--points", type=int, help="Points per frame (default: as many as --a)")
    p.add_argument("--out", required=True, help="Output directory")

    p = add("evaluate", cmd_evaluate, "Compare a generated set against a reference set")
    p.add_argument("--gen", required=True, help="Directory of generated clouds")
    p.add_argument("--ref", required=True, help="Directory of reference clouds")
    p.add_argument("--ref-split", help="Only this split of a dataset directory (e.g. test)")
    p.add_argument("--metrics", type=_metric_list,
                   help=f"Comma-separated subset of {','.join(METRIC_NAMES)}")
    p.add_argument("--grid", type=int, help="JSD voxel grid resolution (default: jsd_grid)")
    p.add_argument("--workers", type=int, help="Threads for distance matrices")
    p.add_argument("--out", help="Also write report.txt / record.tsv here")

    p = add("forward-diffuse", cmd_forward_diffuse, "Write forward-chain snapshots of a cloud")
    p.add_argument("--in", dest="inp", required=True, help="Input cloud")
    p.add_argument("--T", type=int, help="Number of diffusion steps (overrides the config)")
    p.add_argument("--every", type=int, default=10, help="Snapshot cadence in steps")
    p.add_argument("--out", required=True, help="Output directory")

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    _setup_logging(args.verbose, args.log_file)
    if setproctitle is not None:
        setproctitle.setproctitle(f"pdpm {args.command}")

    try:
        return args.func(args)
    except SystemExit as e:
        return int(e.code or 0)
    except DivergenceError as e:
        logger.error("Training diverged: %s", e.report)
        return EXIT_DIVERGED
    except ModeMismatchError as e:
        logger.error("%s", e)
        return EXIT_MODE
    except (PointDiffusionError, OSError, ValueError) as e:
        logger.error("%s", e)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
