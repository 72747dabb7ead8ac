import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from config import RunConfig  # noqa: E402
from pipeline.diffusion import DiffusionSchedule  # noqa: E402

TINY_SETTINGS = {
    "T": "10",
    "latent_dim": "4",
    "hidden_dim": "16",
    "denoiser_layers": "2",
    "time_dim": "8",
    "encoder_widths": "16,16",
    "flow_layers": "2",
    "flow_hidden": "8",
    "batch_size": "2",
    "steps": "3",
    "log_every": "1",
    "eval_every": "0",
    "checkpoint_every": "0",
    "beta_start": "1e-4",
    "beta_end": "0.2",
    "seed": "7",
    "n_clouds": "20",
    "n_points": "16",
    "jsd_grid": "8",
}


def tiny_config(mode: str = "generator", **extra) -> RunConfig:
    cfg = RunConfig()
    for key, value in {**TINY_SETTINGS, "mode": mode, **extra}.items():
        cfg.set(key, str(value))
    return cfg.validate()


def tiny_config_text(**extra) -> str:
    settings = {**TINY_SETTINGS, **extra}
    return "".join(f"{k}={v}\n" for k, v in settings.items())


@pytest.fixture
def two_step_schedule() -> DiffusionSchedule:
    """T = 2, beta = (0.1, 0.2): abar = (0.9, 0.72)."""
    return DiffusionSchedule.from_betas(np.array([0.1, 0.2]))


@pytest.fixture
def gen_config() -> RunConfig:
    return tiny_config("generator")


@pytest.fixture
def ae_config() -> RunConfig:
    return tiny_config("autoencoder")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
