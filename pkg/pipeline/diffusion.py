"""
Closed-form diffusion mathematics over point clouds.

Every point is diffused independently, so all functions here take N x 3
arrays (or PointCloud records) and treat rows as i.i.d. samples. Time
indices are 1-based: t = 1..T, with the convention alpha_bar_0 = 1.

The denoiser is any callable ``denoiser(xt, t, z)`` returning an N x 3
Variable or array that predicts the forward noise eps.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Tuple, Union

import numpy as np

from autodiff import Variable, as_variable, no_grad, reduce_mean, square
from data.cloud import CloudLike, as_points
from utils.errors import NonFiniteError, ScheduleError
from utils.rng import child_of

logger = logging.getLogger(__name__)

TERMINAL_ALPHA_BAR_LIMIT = 0.05

TimeIndex = Union[int, np.ndarray]
Denoiser = Callable[[np.ndarray, TimeIndex, Any], Union[Variable, np.ndarray]]


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-step arrays indexed by t - 1."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    gamma: np.ndarray

    @classmethod
    def from_betas(cls, betas) -> "DiffusionSchedule":
        """Schedule from explicit betas; 0 <= beta < 1 (beta = 0 gives a no-op chain)."""
        beta = np.asarray(betas, dtype=np.float64).reshape(-1)
        if beta.size < 1:
            raise ScheduleError("schedule needs at least one step")
        if not np.all(np.isfinite(beta)) or np.any(beta < 0.0) or np.any(beta >= 1.0):
            raise ScheduleError("every beta must satisfy 0 <= beta < 1")
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
        denom = 1.0 - alpha_bar
        with np.errstate(divide="ignore", invalid="ignore"):
            gamma = np.where(denom > 0.0, (1.0 - alpha_bar_prev) / denom * beta, 0.0)
        for arr in (beta, alpha, alpha_bar, gamma):
            arr.setflags(write=False)
        return cls(T=int(beta.size), beta=beta, alpha=alpha, alpha_bar=alpha_bar, gamma=gamma)

    def check_t(self, t: TimeIndex, lo: int = 1) -> None:
        arr = np.asarray(t)
        if arr.size == 0 or np.any(arr < lo) or np.any(arr > self.T):
            raise ScheduleError(f"t must lie in [{lo}, {self.T}], got {t}")

    def beta_at(self, t: TimeIndex):
        return self.beta[np.asarray(t) - 1]

    def alpha_at(self, t: TimeIndex):
        return self.alpha[np.asarray(t) - 1]

    def alpha_bar_at(self, t: TimeIndex):
        """alpha_bar_t with alpha_bar_0 = 1."""
        t = np.asarray(t)
        padded = np.concatenate([[1.0], self.alpha_bar])
        return padded[t]

    def gamma_at(self, t: TimeIndex):
        return self.gamma[np.asarray(t) - 1]

    def variance_at(self, t: TimeIndex, kind: str = "beta"):
        """Reverse-kernel variance: beta_t, or gamma_t for the ablation."""
        if kind == "beta":
            return self.beta_at(t)
        if kind == "gamma":
            return self.gamma_at(t)
        raise ScheduleError(f"unknown reverse variance {kind!r}")


def make_schedule(T: int, beta_start: float, beta_end: float) -> DiffusionSchedule:
    """Linear beta schedule from beta_start to beta_end inclusive."""
    if int(T) != T or T < 2:
        raise ScheduleError(f"T must be an integer >= 2, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ScheduleError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    sched = DiffusionSchedule.from_betas(np.linspace(beta_start, beta_end, int(T)))
    if sched.alpha_bar[-1] >= TERMINAL_ALPHA_BAR_LIMIT:
        logger.warning(
            "alpha_bar_T = %.4f >= %.2f: x^T is far from N(0, I) (T=%d, beta %.3g -> %.3g)",
            sched.alpha_bar[-1], TERMINAL_ALPHA_BAR_LIMIT, T, beta_start, beta_end,
        )
    return sched


def _coef(values, x: np.ndarray) -> np.ndarray:
    """Scalar coefficient, or a per-point column when t varies over points."""
    values = np.asarray(values, dtype=np.float64)
    return values if values.ndim == 0 else values.reshape(-1, *([1] * (x.ndim - 1)))


def _as_array(out) -> np.ndarray:
    return out.value if isinstance(out, Variable) else np.asarray(out, dtype=np.float64)


# ─────────────────────────── forward process ──────────────────────────────

def forward_marginal_sample(
    x0: CloudLike, t: TimeIndex, sched: DiffusionSchedule, rng
) -> Tuple[np.ndarray, np.ndarray]:
    """Draw x^t ~ q(x^t | x^0); returns (xt, eps) with eps the noise used."""
    x0 = as_points(x0)
    sched.check_t(t)
    ab = _coef(sched.alpha_bar_at(t), x0)
    eps = rng.standard_normal(x0.shape)
    xt = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    return xt, eps


def forward_chain(x0: CloudLike, sched: DiffusionSchedule, rng) -> List[np.ndarray]:
    """Step-by-step chain x^1..x^T."""
    x = as_points(x0)
    chain = []
    for t in range(1, sched.T + 1):
        b = sched.beta[t - 1]
        x = np.sqrt(1.0 - b) * x + np.sqrt(b) * rng.standard_normal(x.shape)
        chain.append(x)
    return chain


# ─────────────────────────── posterior / reverse ──────────────────────────

def posterior_coefficients(t: int, sched: DiffusionSchedule) -> Tuple[float, float]:
    """Coefficients of (x0, xt) in the mean of q(x^{t-1} | x^t, x^0)."""
    sched.check_t(t, lo=2)
    ab = float(sched.alpha_bar_at(t))
    ab_prev = float(sched.alpha_bar_at(t - 1))
    b = float(sched.beta_at(t))
    a = float(sched.alpha_at(t))
    c0 = math.sqrt(ab_prev) * b / (1.0 - ab)
    ct = math.sqrt(a) * (1.0 - ab_prev) / (1.0 - ab)
    return c0, ct


def true_posterior(x0, xt, t: int, sched: DiffusionSchedule) -> Tuple[np.ndarray, float]:
    c0, ct = posterior_coefficients(t, sched)
    mu = c0 * np.asarray(x0, dtype=np.float64) + ct * np.asarray(xt, dtype=np.float64)
    return mu, float(sched.gamma_at(t))


def reverse_mean_from_eps(xt, t: TimeIndex, eps_hat, sched: DiffusionSchedule) -> np.ndarray:
    sched.check_t(t)
    xt = np.asarray(xt, dtype=np.float64)
    a = _coef(sched.alpha_at(t), xt)
    b = _coef(sched.beta_at(t), xt)
    ab = _coef(sched.alpha_bar_at(t), xt)
    return (xt - (b / np.sqrt(1.0 - ab)) * np.asarray(eps_hat, dtype=np.float64)) / np.sqrt(a)


def predict_eps(denoiser: Denoiser, xt: np.ndarray, t: TimeIndex, z) -> np.ndarray:
    """Run the denoiser outside the graph and check its output."""
    with no_grad():
        eps_hat = _as_array(denoiser(xt, t, z))
    if eps_hat.shape != xt.shape:
        raise NonFiniteError("denoiser output", {"shape": eps_hat.shape, "expected": xt.shape})
    if not np.all(np.isfinite(eps_hat)):
        raise NonFiniteError("denoiser output", {"t": t, "bad": int(np.sum(~np.isfinite(eps_hat)))})
    return eps_hat


def reverse_step(
    xt: CloudLike,
    t: int,
    z,
    denoiser: Denoiser,
    sched: DiffusionSchedule,
    rng,
    variance: str = "beta",
) -> np.ndarray:
    """One reverse transition x^t -> x^{t-1}; the t = 1 step adds no noise."""
    xt = as_points(xt)
    sched.check_t(t)
    eps_hat = predict_eps(denoiser, xt, t, z)
    mu = reverse_mean_from_eps(xt, t, eps_hat, sched)
    if t == 1:
        return mu
    var = float(sched.variance_at(t, variance))
    return mu + math.sqrt(var) * rng.standard_normal(xt.shape)


def reverse_chain(
    z,
    n_points: int,
    denoiser: Denoiser,
    sched: DiffusionSchedule,
    rng,
    variance: str = "beta",
) -> np.ndarray:
    """x^T ~ N(0, I) followed by reverse_step for t = T..1, all from one stream."""
    x = rng.standard_normal((n_points, 3))
    for t in range(sched.T, 0, -1):
        x = reverse_step(x, t, z, denoiser, sched, rng, variance)
    return x


# ─────────────────────────── objective terms ──────────────────────────────

def gaussian_kl(mu_q, var_q: float, mu_p, var_p: float) -> float:
    """KL(N(mu_q, var_q I) || N(mu_p, var_p I)) summed over points.

    The last axis is the event dimension (3 for points).
    """
    mu_q = np.asarray(mu_q, dtype=np.float64)
    mu_p = np.asarray(mu_p, dtype=np.float64)
    dim = mu_q.shape[-1] if mu_q.ndim else 1
    n = mu_q.size // dim
    ratio = var_q / var_p
    trace_term = n * dim * (ratio - 1.0 - math.log(ratio))
    return 0.5 * (trace_term + float(np.sum((mu_q - mu_p) ** 2)) / var_p)


def kl_term(x0, xt, t: int, eps_hat, sched: DiffusionSchedule, variance: str = "beta") -> float:
    """KL between the true posterior and the reverse kernel at step t >= 2."""
    mu_t, gamma = true_posterior(x0, xt, t, sched)
    mu_theta = reverse_mean_from_eps(xt, t, eps_hat, sched)
    return gaussian_kl(mu_t, gamma, mu_theta, float(sched.variance_at(t, variance)))


def recon_loglik(x0: CloudLike, x1: CloudLike, z, denoiser: Denoiser, sched: DiffusionSchedule) -> float:
    """log p(x^0 | x^1, z) under N(mu_theta(x^1, 1, z), beta_1 I), summed over points."""
    x0, x1 = as_points(x0), as_points(x1)
    mu = reverse_mean_from_eps(x1, 1, predict_eps(denoiser, x1, 1, z), sched)
    b1 = float(sched.beta[0])
    sq = np.sum((x0 - mu) ** 2, axis=-1)
    per_point = -1.5 * math.log(2.0 * math.pi * b1) - sq / (2.0 * b1)
    return float(np.sum(per_point))


def _step_loss_with_t(
    x0: CloudLike,
    z,
    denoiser: Denoiser,
    sched: DiffusionSchedule,
    rng,
    per_point_t: bool = False,
    scale_by_T: bool = False,
) -> Tuple[Variable, TimeIndex]:
    x0 = as_points(x0)
    if per_point_t:
        t = rng.integers(1, sched.T + 1, size=x0.shape[0])
    else:
        t = int(rng.integers(1, sched.T + 1))
    xt, eps = forward_marginal_sample(x0, t, sched, rng)
    eps_hat = as_variable(denoiser(xt, t, z))
    loss = reduce_mean(square(eps_hat - eps))
    if scale_by_T:
        loss = loss * float(sched.T)
    return loss, t


def simplified_step_loss(
    x0: CloudLike,
    z,
    denoiser: Denoiser,
    sched: DiffusionSchedule,
    rng,
    per_point_t: bool = False,
    scale_by_T: bool = False,
) -> Variable:
    """One-term training loss: mean over points and coords of (eps - eps_hat)^2.

    Draws t ~ Uniform{1..T} (per point with ``per_point_t``), then x^t and
    eps from the same stream.
    """
    loss, _ = _step_loss_with_t(x0, z, denoiser, sched, rng, per_point_t, scale_by_T)
    return loss


def variational_bound(
    x0: CloudLike, z, denoiser: Denoiser, sched: DiffusionSchedule, rng, variance: str = "beta"
) -> Dict[str, float]:
    """Full bound for one cloud in nats: prior KL + sum of step KLs + reconstruction NLL."""
    x0 = as_points(x0)
    ab_T = float(sched.alpha_bar[-1])
    prior = gaussian_kl(math.sqrt(ab_T) * x0, 1.0 - ab_T, np.zeros_like(x0), 1.0)
    kl = 0.0
    for t in range(2, sched.T + 1):
        xt, _ = forward_marginal_sample(x0, t, sched, child_of(rng, "t", t))
        kl += kl_term(x0, xt, t, predict_eps(denoiser, xt, t, z), sched, variance)
    x1, _ = forward_marginal_sample(x0, 1, sched, child_of(rng, "t", 1))
    recon_nll = -recon_loglik(x0, x1, z, denoiser, sched)
    return {"prior": prior, "kl": kl, "recon_nll": recon_nll, "total": prior + kl + recon_nll}
