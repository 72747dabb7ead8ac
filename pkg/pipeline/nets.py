"""
Trainable networks: point-wise denoiser (theta), PointNet encoder (phi)
and affine-coupling flow prior (alpha).

Latents are (1, d) rows; flows also accept (B, d) batches.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from autodiff import (
    Linear,
    Module,
    Variable,
    as_variable,
    clip,
    concat,
    exp,
    reduce_max,
    reduce_sum,
    reshape,
    softplus,
    square,
    tanh,
    tile_rows,
)
from utils.errors import FlowMissingError, NonFiniteError
from utils.rng import child_of

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)

LatentLike = Union[Variable, np.ndarray]


def _as_row(z: LatentLike) -> Variable:
    z = as_variable(z)
    if z.ndim == 1:
        return reshape(z, (1, -1))
    return z


def time_embedding(t, n: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding of t, one row per point (t scalar or length-n array)."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    t_col = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1, 1), (n, 1))
    args = t_col * freqs.reshape(1, -1)
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


# ─────────────────────────── denoiser ─────────────────────────────────────

class Denoiser(Module):
    """eps_theta(x^t, t, z): a per-point MLP.

    Each layer sees [h, x, emb(t), z]; the context is re-concatenated at
    every layer input and the output layer starts at zero.
    """

    def __init__(self, latent_dim: int, rng, hidden: int = 128, layers: int = 4, time_dim: int = 64):
        self.latent_dim = latent_dim
        self.time_dim = time_dim
        ctx = 3 + time_dim + latent_dim
        self.layers = [Linear(ctx, hidden, child_of(rng, "layer", 0))]
        for i in range(1, layers):
            self.layers.append(Linear(hidden + ctx, hidden, child_of(rng, "layer", i)))
        self.out = Linear(hidden + ctx, 3, rng, zero_init=True)

    def __call__(self, xt, t, z: LatentLike) -> Variable:
        x = as_variable(xt)
        n = x.shape[0]
        ctx = concat([x, Variable(time_embedding(t, n, self.time_dim)), tile_rows(_as_row(z), n)], axis=1)
        h = softplus(self.layers[0](ctx))
        for layer in self.layers[1:]:
            h = softplus(layer(concat([h, ctx], axis=1)))
        out = self.out(concat([h, ctx], axis=1))
        if not np.all(np.isfinite(out.value)):
            raise NonFiniteError("denoiser output", {"t": t if np.ndim(t) == 0 else "per-point"})
        return out

    denoise = __call__


# ─────────────────────────── encoder ──────────────────────────────────────

@dataclass
class GaussianLatent:
    """Diagonal Gaussian q(z | X) with (1, d) mean and log-variance rows."""

    mean: Variable
    log_var: Variable

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]


class Encoder(Module):
    """PointNet: shared per-point MLP, max-pool over points, mean / log-variance heads."""

    def __init__(self, latent_dim: int, rng, widths: Tuple[int, ...] = (128, 256), logvar_clip: float = 10.0):
        self.logvar_clip = logvar_clip
        dims = (3,) + tuple(widths)
        self.point_mlp = [
            Linear(dims[i], dims[i + 1], child_of(rng, "point", i)) for i in range(len(widths))
        ]
        self.mean_head = Linear(dims[-1], latent_dim, child_of(rng, "mean"))
        self.logvar_head = Linear(dims[-1], latent_dim, child_of(rng, "logvar"))

    def __call__(self, x0) -> GaussianLatent:
        h = as_variable(x0)
        for layer in self.point_mlp:
            h = softplus(layer(h))
        pooled = reduce_max(h, axis=0, keepdims=True)
        log_var = clip(self.logvar_head(pooled), -self.logvar_clip, self.logvar_clip)
        return GaussianLatent(mean=self.mean_head(pooled), log_var=log_var)

    encode = __call__


def sample_latent(g: GaussianLatent, rng) -> Variable:
    """Reparameterized draw z = mean + exp(log_var / 2) * eta."""
    eta = rng.standard_normal(g.mean.shape)
    return g.mean + exp(g.log_var * 0.5) * eta


def gaussian_entropy(g: GaussianLatent) -> Variable:
    """Closed-form entropy of the diagonal Gaussian."""
    return reduce_sum(g.log_var) * 0.5 + 0.5 * g.dim * (1.0 + LOG_2PI)


def kl_to_standard_normal(g: GaussianLatent) -> Variable:
    return reduce_sum(exp(g.log_var) + square(g.mean) - 1.0 - g.log_var) * 0.5


def standard_normal_logp(z: LatentLike) -> Variable:
    """Row-wise log N(z; 0, I) as a (B, 1) column."""
    z = _as_row(z)
    return reduce_sum(square(z), axis=1, keepdims=True) * -0.5 - 0.5 * z.shape[1] * LOG_2PI


# ─────────────────────────── flow prior ───────────────────────────────────

class CouplingLayer(Module):
    """Affine coupling: masked coordinates pass through and condition the rest.

    y = w * exp(s) + t on the unmasked coordinates, with s bounded by
    tanh * s_max; log|det| = sum(s).
    """

    def __init__(self, dim: int, mask: np.ndarray, rng, hidden: int = 128, s_max: float = 5.0):
        self._mask = np.asarray(mask, dtype=np.float64).reshape(1, dim)
        self.s_max = s_max
        self.scale_in = Linear(dim, hidden, child_of(rng, "scale", 0))
        self.scale_out = Linear(hidden, dim, rng, zero_init=True)
        self.shift_in = Linear(dim, hidden, child_of(rng, "shift", 0))
        self.shift_out = Linear(hidden, dim, rng, zero_init=True)

    def _scale_shift(self, kept: Variable) -> Tuple[Variable, Variable]:
        free = np.ones((kept.shape[0], 1)) @ (1.0 - self._mask)
        s = tanh(self.scale_out(tanh(self.scale_in(kept)))) * self.s_max * free
        shift = self.shift_out(tanh(self.shift_in(kept))) * free
        return s, shift

    def _kept(self, x: Variable) -> Variable:
        return x * (np.ones((x.shape[0], 1)) @ self._mask)

    def forward(self, w: Variable) -> Tuple[Variable, Variable]:
        s, shift = self._scale_shift(self._kept(w))
        return w * exp(s) + shift, reduce_sum(s, axis=1, keepdims=True)

    def inverse(self, y: Variable) -> Tuple[Variable, Variable]:
        s, shift = self._scale_shift(self._kept(y))
        return (y - shift) * exp(-s), -reduce_sum(s, axis=1, keepdims=True)


class FlowPrior(Module):
    """Stack of K coupling layers; layer k keeps coordinates j with (j + k) even."""

    def __init__(self, dim: int, rng, layers: int = 6, hidden: int = 128, s_max: float = 5.0):
        self.dim = dim
        self.layers = []
        for k in range(layers):
            mask = np.array([(j + k) % 2 == 0 for j in range(dim)], dtype=np.float64)
            self.layers.append(CouplingLayer(dim, mask, child_of(rng, "coupling", k), hidden, s_max))

    def forward(self, w: LatentLike) -> Tuple[Variable, Variable]:
        """z = F(w) and log|det dF/dw| per row."""
        z = _as_row(w)
        log_det = Variable(np.zeros((z.shape[0], 1)))
        for layer in self.layers:
            z, ld = layer.forward(z)
            log_det = log_det + ld
        return z, log_det

    def inverse(self, z: LatentLike) -> Tuple[Variable, Variable]:
        """w = F^{-1}(z) and log|det dF^{-1}/dz| per row."""
        w = _as_row(z)
        log_det = Variable(np.zeros((w.shape[0], 1)))
        for layer in reversed(self.layers):
            w, ld = layer.inverse(w)
            log_det = log_det + ld
        return w, log_det

    def log_prob(self, z: LatentLike) -> Variable:
        w, log_det_inv = self.inverse(z)
        return standard_normal_logp(w) + log_det_inv


def flow_forward(flow: FlowPrior, w: LatentLike) -> Tuple[Variable, Variable]:
    return flow.forward(w)


def flow_inverse(flow: FlowPrior, z: LatentLike) -> Tuple[Variable, Variable]:
    return flow.inverse(z)


# ─────────────────────────── model container ──────────────────────────────

class ShapeModel(Module):
    """theta (denoiser), phi (encoder) and optional alpha (flow prior).

    Parameter names are prefixed with the attribute: ``theta.``, ``phi.``,
    ``alpha.``.
    """

    def __init__(self, denoiser: Denoiser, encoder: Encoder, flow: Optional[FlowPrior] = None):
        self.theta = denoiser
        self.phi = encoder
        self.alpha = flow

    @classmethod
    def build(cls, train_cfg, rng, with_flow: Optional[bool] = None) -> "ShapeModel":
        """Initialize from TrainConfig; the flow exists for generator mode with a flow prior."""
        if with_flow is None:
            with_flow = train_cfg.mode == "generator" and train_cfg.prior == "flow"
        init = child_of(rng, "init")
        denoiser = Denoiser(
            train_cfg.latent_dim,
            child_of(init, "denoiser"),
            hidden=train_cfg.hidden_dim,
            layers=train_cfg.denoiser_layers,
            time_dim=train_cfg.time_dim,
        )
        encoder = Encoder(
            train_cfg.latent_dim,
            child_of(init, "encoder"),
            widths=tuple(train_cfg.encoder_widths),
            logvar_clip=train_cfg.logvar_clip,
        )
        flow = None
        if with_flow:
            flow = FlowPrior(
                train_cfg.latent_dim,
                child_of(init, "flow"),
                layers=train_cfg.flow_layers,
                hidden=train_cfg.flow_hidden,
                s_max=train_cfg.flow_scale_max,
            )
        model = cls(denoiser, encoder, flow)
        logger.info(
            "Built model: %d denoiser, %d encoder, %d flow parameters",
            denoiser.num_parameters(), encoder.num_parameters(), flow.num_parameters() if flow else 0,
        )
        return model

    @property
    def denoiser(self) -> Denoiser:
        return self.theta

    @property
    def encoder(self) -> Encoder:
        return self.phi

    @property
    def flow(self) -> Optional[FlowPrior]:
        return self.alpha

    def require_flow(self) -> FlowPrior:
        if self.alpha is None:
            raise FlowMissingError("this model has no flow prior (autoencoder mode or prior=normal)")
        return self.alpha

    def prior_logp(self, z: LatentLike) -> Variable:
        """log p(z): the flow prior when present, otherwise N(0, I)."""
        if self.alpha is None:
            return standard_normal_logp(z)
        return self.alpha.log_prob(z)
