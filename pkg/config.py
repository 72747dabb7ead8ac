"""Central configuration: defaults, .env / environment overrides and run-config files.

Precedence, lowest to highest:
    dataclass defaults -> PDPM_<KEY> environment variables (.env included)
    -> run-config file -> command-line flags

Run-config files are plain ``key=value`` lines with ``#`` comments. Keys are
flat (``lr``, ``n_points``, ``jsd_grid``...) and unique across sections.
"""

import io
import logging
import os
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple

from dotenv import load_dotenv
from dotenv.parser import parse_stream

from utils.errors import ConfigError
from utils.textfmt import format_value, render_key_values, split_csv

logger = logging.getLogger(__name__)

# Project root = directory containing this file
_PROJECT_DIR = Path(__file__).parent.resolve()

# Load .env from project root
_env_path = _PROJECT_DIR / ".env"
if _env_path.exists():
    load_dotenv(_env_path)

ENV_PREFIX = "PDPM_"

MODES = ("generator", "autoencoder")
PRIORS = ("flow", "normal")
REVERSE_VARIANCES = ("beta", "gamma")
INTERP_SPACES = ("w", "z")
FAMILIES = ("sphere", "torus", "plane", "cluster")
METRIC_NAMES = ("cd", "emd", "mmd", "cov", "1nna", "jsd")


@dataclass
class TrainConfig:
    """Model, schedule and optimizer knobs."""

    mode: str = "generator"
    prior: str = "flow"

    # Diffusion schedule
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.06  # alpha_bar_T ~ 0.047 at T=100

    # Architecture
    latent_dim: int = 64
    hidden_dim: int = 128
    denoiser_layers: int = 4
    time_dim: int = 64
    encoder_widths: Tuple[int, ...] = (128, 256)
    logvar_clip: float = 10.0
    flow_layers: int = 6
    flow_hidden: int = 128
    flow_scale_max: float = 5.0

    # Optimization
    batch_size: int = 16
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    steps: int = 5000
    seed: int = 2021
    kl_weight: float = 1.0
    divergence_threshold: float = 1e6

    # Cadences (in steps; 0 disables)
    log_every: int = 50
    eval_every: int = 500
    checkpoint_every: int = 1000

    # Ablations
    reverse_variance: str = "beta"
    per_point_t: bool = False
    scale_by_T: bool = False
    interp_space: str = "w"
    rotate_augment: bool = False

    def validate(self) -> None:
        _choice("mode", self.mode, MODES)
        _choice("prior", self.prior, PRIORS)
        _choice("reverse_variance", self.reverse_variance, REVERSE_VARIANCES)
        _choice("interp_space", self.interp_space, INTERP_SPACES)
        if self.T < 2:
            raise ConfigError(f"T must be >= 2, got {self.T}")
        if not (0.0 < self.beta_start <= self.beta_end < 1.0):
            raise ConfigError(
                f"need 0 < beta_start <= beta_end < 1, got ({self.beta_start}, {self.beta_end})"
            )
        for name in ("latent_dim", "hidden_dim", "denoiser_layers", "time_dim", "flow_layers",
                     "flow_hidden", "batch_size", "steps"):
            _positive(name, getattr(self, name))
        if self.time_dim % 2:
            raise ConfigError(f"time_dim must be even, got {self.time_dim}")
        if not self.encoder_widths or any(w <= 0 for w in self.encoder_widths):
            raise ConfigError(f"encoder_widths must be positive, got {self.encoder_widths}")
        for name in ("lr", "adam_eps", "logvar_clip", "flow_scale_max", "divergence_threshold"):
            _positive(name, getattr(self, name))
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ConfigError("adam betas must lie in [0, 1)")
        if self.kl_weight < 0:
            raise ConfigError(f"kl_weight must be >= 0, got {self.kl_weight}")
        for name in ("log_every", "eval_every", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")


@dataclass
class DataConfig:
    """Synthetic dataset knobs."""

    n_clouds: int = 600
    n_points: int = 128
    families: Tuple[str, ...] = ("sphere", "torus", "cluster")
    cluster_lobes: int = 2
    split_train: float = 0.80
    split_test: float = 0.15
    split_val: float = 0.05
    normalize_per_axis: bool = False

    def validate(self) -> None:
        _positive("n_clouds", self.n_clouds)
        if self.n_points < 2:
            raise ConfigError(f"n_points must be >= 2, got {self.n_points}")
        if not self.families:
            raise ConfigError("families must not be empty")
        for fam in self.families:
            _choice("families", fam, FAMILIES)
        _positive("cluster_lobes", self.cluster_lobes)
        ratios = (self.split_train, self.split_test, self.split_val)
        if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must be >= 0 and sum to 1, got {ratios}")


@dataclass
class EvalConfig:
    """Evaluation knobs."""

    metrics: Tuple[str, ...] = METRIC_NAMES
    jsd_grid: int = 28
    workers: int = 1

    def validate(self) -> None:
        for name in self.metrics:
            _choice("metrics", name, METRIC_NAMES)
        _positive("jsd_grid", self.jsd_grid)
        _positive("workers", self.workers)


def _choice(key: str, value: str, allowed: Iterable[str]) -> None:
    allowed = tuple(allowed)
    if value not in allowed:
        raise ConfigError(f"{key}: {value!r} is not one of {', '.join(allowed)}")


def _positive(key: str, value) -> None:
    if not value > 0:
        raise ConfigError(f"{key} must be positive, got {value}")


def _coerce(raw: str, annotation) -> Any:
    origin = typing.get_origin(annotation)
    if origin is tuple:
        item_type = typing.get_args(annotation)[0]
        return tuple(_coerce(part, item_type) for part in split_csv(raw))
    if annotation is bool:
        lowered = raw.strip().lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"expected true/false, got {raw!r}")
    if annotation is int:
        return int(raw.strip())
    if annotation is float:
        return float(raw.strip())
    return raw.strip()


@dataclass
class RunConfig:
    """Everything a run needs; the unit echoed into checkpoints and output dirs."""

    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def _index(self) -> Dict[str, Tuple[Any, Any]]:
        index: Dict[str, Tuple[Any, Any]] = {}
        for section in (self.train, self.data, self.eval):
            hints = typing.get_type_hints(type(section))
            for f in fields(section):
                index[f.name] = (section, hints[f.name])
        return index

    def keys(self) -> Tuple[str, ...]:
        return tuple(sorted(self._index()))

    def get(self, key: str) -> Any:
        index = self._index()
        if key not in index:
            raise ConfigError(f"unknown key {key!r}")
        return getattr(index[key][0], key)

    def set(self, key: str, raw: str, path: Optional[str] = None, line: Optional[int] = None) -> None:
        index = self._index()
        if key not in index:
            raise ConfigError(f"unknown key {key!r}", path, line)
        section, annotation = index[key]
        try:
            value = _coerce(raw, annotation)
        except ValueError as e:
            raise ConfigError(f"bad value for {key}: {e}", path, line) from e
        setattr(section, key, value)

    def apply_env(self, environ: Optional[Mapping[str, str]] = None) -> "RunConfig":
        environ = os.environ if environ is None else environ
        for key in self._index():
            raw = environ.get(ENV_PREFIX + key)
            if raw is not None:
                self.set(key, raw, path=f"${ENV_PREFIX}{key}")
        return self

    def apply_text(self, text: str, source: str = "<text>") -> "RunConfig":
        for binding in parse_stream(io.StringIO(text)):
            # a binding's original text starts with any blank lines before it
            raw = binding.original.string
            line = binding.original.line + raw[: len(raw) - len(raw.lstrip())].count("\n")
            if binding.error:
                raise ConfigError(f"malformed line {binding.original.string.strip()!r}", source, line)
            if binding.key is None:
                continue
            if binding.value is None:
                raise ConfigError(f"missing '=' after {binding.key!r}", source, line)
            self.set(binding.key, binding.value, source, line)
        return self

    def apply_file(self, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}", str(path)) from e
        logger.debug("Loading run config from %s", path)
        return self.apply_text(text, source=str(path))

    def apply_overrides(self, pairs: Iterable[str]) -> "RunConfig":
        for i, pair in enumerate(pairs, start=1):
            key, sep, value = pair.partition("=")
            if not sep:
                raise ConfigError(f"override must look like key=value, got {pair!r}", "--set", i)
            self.set(key.strip(), value, "--set", i)
        return self

    def validate(self) -> "RunConfig":
        self.train.validate()
        self.data.validate()
        self.eval.validate()
        return self

    def as_dict(self) -> Dict[str, Any]:
        return {key: getattr(section, key) for key, (section, _) in self._index().items()}

    def to_text(self) -> str:
        """Canonical, sorted ``key=value`` rendering of the effective config."""
        return render_key_values(self.as_dict())

    @classmethod
    def from_text(cls, text: str, source: str = "<text>") -> "RunConfig":
        return cls().apply_text(text, source).validate()

    def describe(self, key: str) -> str:
        return f"{key}={format_value(self.get(key))}"


def load_run_config(
    path: Optional[str] = None,
    overrides: Iterable[str] = (),
    seed: Optional[int] = None,
    steps: Optional[int] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """Build the effective RunConfig from every layer and validate it."""
    cfg = RunConfig().apply_env(environ)
    if path:
        cfg.apply_file(path)
    cfg.apply_overrides(overrides)
    if seed is not None:
        cfg.train.seed = int(seed)
    if steps is not None:
        cfg.train.steps = int(steps)
    return cfg.validate()
