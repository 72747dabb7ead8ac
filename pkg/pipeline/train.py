"""
Training objectives and the optimization loop.

generator_loss:   diffusion term + latent term L_z = -log p(z) - H[q(z|X)]
autoencoder_loss: diffusion term only, conditioned on the encoder mean

Cloud i of a batch draws its diffusion noise from ``rng.child("diffusion", i)``
and (generator only) its latent from ``rng.child("latent", i)``.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from autodiff import Adam, Variable, no_grad, reduce_sum
from config import RunConfig
from data.cloud import CloudLike, as_points, is_train_normalized, rotate_about_gravity
from pipeline.checkpoint import Checkpoint
from pipeline.diffusion import DiffusionSchedule, _step_loss_with_t, make_schedule, variational_bound
from pipeline.nets import ShapeModel, gaussian_entropy, sample_latent
from utils.errors import DivergenceError, ModeMismatchError, NonFiniteError, NormalizationError
from utils.rng import RngStream, child_of
from utils.textfmt import format_float, tsv_line

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("step", "loss_total", "loss_diff", "loss_latent", "wall_ms")


@dataclass
class LossParts:
    total: Variable
    diffusion: float
    latent: float
    t_drawn: List = field(default_factory=list)


def latent_term(model: ShapeModel, g, z: Variable) -> Variable:
    """Single-draw estimate of -E[log p(z)] - H[q(z|X)] at a reparameterized z."""
    return reduce_sum(-model.prior_logp(z)) - gaussian_entropy(g)


def _batch_loss(
    batch: Sequence[CloudLike],
    model: ShapeModel,
    sched: DiffusionSchedule,
    rng,
    mode: str,
    kl_weight: float = 1.0,
    per_point_t: bool = False,
    scale_by_T: bool = False,
) -> LossParts:
    if mode not in ("generator", "autoencoder"):
        raise ModeMismatchError(f"unknown training mode {mode!r}")
    if not batch:
        raise ValueError("empty batch")

    total: Optional[Variable] = None
    diff_sum = 0.0
    latent_sum = 0.0
    t_drawn = []
    for i, cloud in enumerate(batch):
        x0 = as_points(cloud)
        g = model.encoder(x0)
        z = g.mean
        lat = None
        if mode == "generator":
            z = sample_latent(g, child_of(rng, "latent", i))
            lat = latent_term(model, g, z)

        diff, t = _step_loss_with_t(
            x0, z, model.denoiser, sched, child_of(rng, "diffusion", i), per_point_t, scale_by_T
        )
        t_drawn.append(int(t) if np.ndim(t) == 0 else "per-point")
        diff_sum += diff.item()
        term = diff
        if lat is not None:
            latent_sum += lat.item()
            term = term + lat * kl_weight
        total = term if total is None else total + term

    n = float(len(batch))
    return LossParts(total=total / n, diffusion=diff_sum / n, latent=latent_sum / n, t_drawn=t_drawn)


def generator_loss(
    batch: Sequence[CloudLike], model: ShapeModel, sched: DiffusionSchedule, rng, **options
) -> Variable:
    """Batch-averaged diffusion loss plus latent term (flow prior, or N(0, I) without a flow)."""
    return _batch_loss(batch, model, sched, rng, "generator", **options).total


def autoencoder_loss(
    batch: Sequence[CloudLike], model: ShapeModel, sched: DiffusionSchedule, rng, **options
) -> Variable:
    """Batch-averaged diffusion loss with z fixed to the encoder mean."""
    options.pop("kl_weight", None)
    return _batch_loss(batch, model, sched, rng, "autoencoder", **options).total


class Trainer:
    """Owns the model, the optimizer and the step counter of one run.

    Step k draws everything from ``RngStream(seed).child("step", k)``, so a
    run resumed from a checkpoint takes exactly the steps it would have taken.
    """

    def __init__(
        self,
        config: RunConfig,
        train_clouds: Sequence[CloudLike],
        val_clouds: Sequence[CloudLike] = (),
        model: Optional[ShapeModel] = None,
        optimizer_state: Optional[Dict[str, np.ndarray]] = None,
        step: int = 0,
        schedule: Optional[DiffusionSchedule] = None,
    ):
        self.config = config
        tc = config.train
        self.train_clouds = [as_points(c) for c in train_clouds]
        self.val_clouds = [as_points(c) for c in val_clouds]
        if not self.train_clouds:
            raise ValueError("training set is empty")
        for i, cloud in enumerate(self.train_clouds):
            if not is_train_normalized(cloud):
                raise NormalizationError(f"training cloud {i} is not zero-mean / unit-variance")

        self.schedule = schedule or make_schedule(tc.T, tc.beta_start, tc.beta_end)
        self.root = RngStream(tc.seed)
        self.model = model or ShapeModel.build(tc, self.root)
        if tc.mode == "generator" and tc.prior == "flow":
            self.model.require_flow()
        self.optimizer = Adam(
            self.model.named_parameters(),
            lr=tc.lr,
            beta1=tc.adam_beta1,
            beta2=tc.adam_beta2,
            eps=tc.adam_eps,
        )
        if optimizer_state:
            self.optimizer.load_state_dict(optimizer_state)
        self.step_count = step
        self.last_record: Dict[str, float] = {}

    @classmethod
    def from_checkpoint(
        cls, ckpt: Checkpoint, train_clouds: Sequence[CloudLike], val_clouds: Sequence[CloudLike] = ()
    ) -> "Trainer":
        return cls(
            ckpt.config,
            train_clouds,
            val_clouds,
            model=ckpt.build_model(),
            optimizer_state=ckpt.optimizer,
            step=ckpt.step,
            schedule=ckpt.schedule,
        )

    # ─────────────────────────── one step ─────────────────────────────────

    def _loss_options(self) -> Dict:
        tc = self.config.train
        return {"kl_weight": tc.kl_weight, "per_point_t": tc.per_point_t, "scale_by_T": tc.scale_by_T}

    def _batch(self, stream: RngStream) -> List[np.ndarray]:
        tc = self.config.train
        n = len(self.train_clouds)
        size = min(tc.batch_size, n)
        idx = stream.child("batch").choice(n, size=size, replace=False)
        clouds = [self.train_clouds[int(i)] for i in idx]
        if tc.rotate_augment:
            angles = stream.child("rotate").uniform(0.0, 2.0 * math.pi, size=size)
            clouds = [rotate_about_gravity(c, a) for c, a in zip(clouds, angles)]
        return clouds

    def _param_norm(self) -> float:
        return float(math.sqrt(sum(float(np.sum(p.value ** 2)) for p in self.model.parameters())))

    def train_step(self) -> Dict[str, float]:
        tc = self.config.train
        k = self.step_count + 1
        stream = self.root.child("step", k)
        batch = self._batch(stream)
        self.optimizer.zero_grad()

        try:
            parts = _batch_loss(
                batch, self.model, self.schedule, stream.child("loss"), tc.mode, **self._loss_options()
            )
        except NonFiniteError as e:
            report = {"step": k, "reason": str(e), "param_norm": self._param_norm()}
            logger.error("Divergence at step %d: %s", k, report)
            raise DivergenceError(report) from e

        loss = parts.total.item()
        if not math.isfinite(loss) or loss > tc.divergence_threshold:
            report = {
                "step": k,
                "loss": loss,
                "loss_diff": parts.diffusion,
                "loss_latent": parts.latent,
                "t_drawn": ",".join(str(t) for t in parts.t_drawn),
                "param_norm": self._param_norm(),
                "threshold": tc.divergence_threshold,
            }
            logger.error("Divergence at step %d: %s", k, report)
            raise DivergenceError(report)

        parts.total.backward()
        grad_norm = self.optimizer.grad_norm()
        if not math.isfinite(grad_norm):
            report = {"step": k, "loss": loss, "grad_norm": grad_norm, "param_norm": self._param_norm()}
            logger.error("Non-finite gradient at step %d: %s", k, report)
            raise DivergenceError(report)
        self.optimizer.step()
        self.step_count = k
        return {
            "step": k,
            "loss_total": loss,
            "loss_diff": parts.diffusion,
            "loss_latent": parts.latent,
            "grad_norm": grad_norm,
        }

    # ─────────────────────────── evaluation ───────────────────────────────

    def validate(self) -> Dict[str, float]:
        """Validation loss with streams fixed per step, plus the full bound on the first cloud."""
        if not self.val_clouds:
            return {}
        tc = self.config.train
        stream = self.root.child("eval", self.step_count)
        with no_grad():
            parts = _batch_loss(
                self.val_clouds, self.model, self.schedule, stream.child("loss"), tc.mode,
                **self._loss_options(),
            )
            first = self.val_clouds[0]
            z = self.model.encoder(first).mean
            bound = variational_bound(
                first, z, self.model.denoiser, self.schedule, stream.child("bound"), tc.reverse_variance
            )
        result = {
            "val_loss": parts.total.item(),
            "val_loss_diff": parts.diffusion,
            "val_bound_nats": bound["total"],
        }
        logger.info(
            "Eval at step %d: val_loss=%.5f diff=%.5f bound=%.2f nats",
            self.step_count, result["val_loss"], result["val_loss_diff"], result["val_bound_nats"],
        )
        return result

    # ─────────────────────────── loop ─────────────────────────────────────

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            config=self.config,
            schedule=self.schedule,
            params=self.model.state_dict(),
            optimizer=self.optimizer.state_dict(),
            step=self.step_count,
        )

    def run(
        self,
        steps: Optional[int] = None,
        trace_path: Optional[Path] = None,
        checkpoint_path: Optional[Path] = None,
    ) -> Checkpoint:
        """Train until ``config.train.steps`` (or ``steps`` more) and return the final checkpoint."""
        tc = self.config.train
        until = tc.steps if steps is None else self.step_count + steps
        if until <= self.step_count:
            logger.info("Nothing to do: already at step %d", self.step_count)
            ckpt = self.checkpoint()
            if checkpoint_path is not None:
                ckpt.save(checkpoint_path)
            return ckpt

        trace = None
        if trace_path is not None:
            trace_path = Path(trace_path)
            trace_path.parent.mkdir(parents=True, exist_ok=True)
            fresh = self.step_count == 0 or not trace_path.exists()
            trace = open(trace_path, "w" if fresh else "a", encoding="utf-8")
            if fresh:
                trace.write(tsv_line(TRACE_COLUMNS))

        logger.info(
            "Training %s model from step %d to %d (T=%d, batch %d, lr %s)",
            tc.mode, self.step_count, until, self.schedule.T, tc.batch_size, format_float(tc.lr),
        )
        started = time.monotonic()
        try:
            while self.step_count < until:
                rec = self.train_step()
                self.last_record = rec
                k = rec["step"]
                if (tc.log_every and k % tc.log_every == 0) or k == 1 or k == until:
                    wall_ms = int((time.monotonic() - started) * 1000)
                    if trace is not None:
                        trace.write(tsv_line([
                            k, rec["loss_total"], rec["loss_diff"], rec["loss_latent"], wall_ms,
                        ]))
                        trace.flush()
                    logger.info(
                        "step %d/%d loss=%.5f diff=%.5f latent=%.4f |g|=%.3f (%.1fs)",
                        k, until, rec["loss_total"], rec["loss_diff"], rec["loss_latent"],
                        rec["grad_norm"], wall_ms / 1000.0,
                    )
                if tc.eval_every and k % tc.eval_every == 0:
                    self.validate()
                if checkpoint_path is not None and tc.checkpoint_every and k % tc.checkpoint_every == 0:
                    self.checkpoint().save(checkpoint_path)
        finally:
            if trace is not None:
                trace.close()

        ckpt = self.checkpoint()
        if checkpoint_path is not None:
            ckpt.save(checkpoint_path)
        return ckpt


def train(
    config: RunConfig,
    train_clouds: Sequence[CloudLike],
    val_clouds: Sequence[CloudLike] = (),
    trace_path: Optional[Path] = None,
    checkpoint_path: Optional[Path] = None,
) -> Checkpoint:
    return Trainer(config, train_clouds, val_clouds).run(trace_path=trace_path, checkpoint_path=checkpoint_path)
