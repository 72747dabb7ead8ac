"""Generation, reconstruction and latent interpolation from a trained checkpoint."""

import logging
from typing import List, Optional, Tuple, Union

import numpy as np

from autodiff import no_grad
from data.cloud import CloudLike, as_points
from pipeline.checkpoint import Checkpoint
from pipeline.diffusion import DiffusionSchedule, reverse_chain
from pipeline.nets import ShapeModel
from utils.errors import FlowMissingError, ModeMismatchError
from utils.rng import child_of

logger = logging.getLogger(__name__)


class Sampler:
    """A loaded model with its schedule and sampling options."""

    def __init__(
        self,
        model: ShapeModel,
        schedule: DiffusionSchedule,
        mode: str = "generator",
        variance: str = "beta",
        interp_space: str = "w",
    ):
        self.model = model
        self.schedule = schedule
        self.mode = mode
        self.variance = variance
        self.interp_space = interp_space

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "Sampler":
        tc = ckpt.config.train
        return cls(ckpt.build_model(), ckpt.schedule, tc.mode, tc.reverse_variance, tc.interp_space)

    def _decode(self, z: np.ndarray, n_points: int, rng) -> np.ndarray:
        return reverse_chain(z, n_points, self.model.denoiser, self.schedule, rng, self.variance)

    def encode_mean(self, cloud: CloudLike) -> np.ndarray:
        with no_grad():
            return self.model.encoder(as_points(cloud)).mean.value.copy()

    def generate(self, n_clouds: int, n_points: int, rng) -> List[np.ndarray]:
        """w ~ N(0, I), z = F(w), then the reverse chain from fresh noise."""
        if self.mode != "generator":
            raise ModeMismatchError("generator checkpoint required")
        d = self.model.encoder.mean_head.out_dim
        clouds = []
        for i in range(n_clouds):
            w = child_of(rng, "latent", i).standard_normal((1, d))
            if self.model.flow is not None:
                with no_grad():
                    z = self.model.flow.forward(w)[0].value
            else:
                z = w
            clouds.append(self._decode(z, n_points, child_of(rng, "chain", i)))
            logger.debug("Generated cloud %d/%d", i + 1, n_clouds)
        return clouds

    def reconstruct(self, x0: CloudLike, n_points: int, rng) -> np.ndarray:
        """Decode the encoder mean of x0 with n_points fresh points."""
        return self._decode(self.encode_mean(x0), n_points, child_of(rng, "chain"))

    def interpolation_latents(
        self, a: CloudLike, b: CloudLike, steps: int, extrapolate: float = 0.0
    ) -> Tuple[np.ndarray, List[np.ndarray]]:
        """lambda grid on [-m, 1 + m] and the latent for each frame."""
        if steps < 2:
            raise ValueError(f"interpolation needs at least 2 steps, got {steps}")
        lams = np.linspace(-extrapolate, 1.0 + extrapolate, steps)
        if self.interp_space == "w" and self.model.flow is None:
            raise FlowMissingError("interpolation in w-space needs a flow prior; set interp_space=z")
        za, zb = self.encode_mean(a), self.encode_mean(b)
        if np.array_equal(za, zb):
            return lams, [za.copy() for _ in lams]

        if self.interp_space == "w":
            with no_grad():
                wa = self.model.flow.inverse(za)[0].value
                wb = self.model.flow.inverse(zb)[0].value
        else:
            wa, wb = za, zb

        latents = []
        for lam in lams:
            if lam == 0.0:
                latents.append(za.copy())
            elif lam == 1.0:
                latents.append(zb.copy())
            else:
                w = (1.0 - lam) * wa + lam * wb
                if self.interp_space == "w":
                    with no_grad():
                        w = self.model.flow.forward(w)[0].value
                latents.append(w)
        return lams, latents

    def interpolate(
        self, a: CloudLike, b: CloudLike, steps: int, extrapolate: float, n_points: int, rng
    ) -> Tuple[np.ndarray, List[np.ndarray]]:
        """Decode every frame with the same chain stream as reconstruct()."""
        lams, latents = self.interpolation_latents(a, b, steps, extrapolate)
        frames = [self._decode(z, n_points, child_of(rng, "chain")) for z in latents]
        return lams, frames


def _sampler(source: Union[Checkpoint, Sampler]) -> Sampler:
    return source if isinstance(source, Sampler) else Sampler.from_checkpoint(source)


def generate(checkpoint: Union[Checkpoint, Sampler], n_clouds: int, n_points: int, rng) -> List[np.ndarray]:
    return _sampler(checkpoint).generate(n_clouds, n_points, rng)


def reconstruct(checkpoint: Union[Checkpoint, Sampler], x0: CloudLike, n_points: int, rng) -> np.ndarray:
    return _sampler(checkpoint).reconstruct(x0, n_points, rng)


def interpolate(
    checkpoint: Union[Checkpoint, Sampler],
    a: CloudLike,
    b: CloudLike,
    steps: int,
    extrapolate: float,
    rng,
    n_points: Optional[int] = None,
) -> Tuple[np.ndarray, List[np.ndarray]]:
    sampler = _sampler(checkpoint)
    n_points = n_points or as_points(a).shape[0]
    return sampler.interpolate(a, b, steps, extrapolate, n_points, rng)
