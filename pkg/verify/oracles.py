"""
Independent reference computations for the test suite.

Nothing here imports the project's own modules. Formulas are re-derived
from scratch, mostly with plain loops; several oracles are factorial or
quadratic in their input size.
"""

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
from scipy import integrate

MAX_ASSIGNMENT_SIZE = 8
MIN_MC_SAMPLES = 10_000


# ─────────────────────────── Gaussian algebra ─────────────────────────────

def gaussian_pdf(x: float, mean: float, var: float) -> float:
    return math.exp(-((x - mean) ** 2) / (2.0 * var)) / math.sqrt(2.0 * math.pi * var)


def gaussian_logpdf(x: Sequence[float], mean: Sequence[float], var: float) -> float:
    """Log-density of an isotropic Gaussian, coordinate by coordinate."""
    total = 0.0
    for xi, mi in zip(x, mean):
        total += math.log(gaussian_pdf(float(xi), float(mi), var))
    return total


def gaussian_posterior_oracle(
    prior: Tuple[float, float], likelihood_coeff: float, obs_noise: float, obs: float
) -> Tuple[float, float]:
    """Posterior of x ~ N(m, v) after observing y = a*x + N(0, v2): precisions add."""
    m, v = prior
    if v <= 0 or obs_noise <= 0:
        raise ValueError("prior and observation variances must be positive")
    a = likelihood_coeff
    precision = 1.0 / v + a * a / obs_noise
    var = 1.0 / precision
    mean = var * (m / v + a * obs / obs_noise)
    return mean, var


def schedule_products(betas: Sequence[float]) -> List[float]:
    """abar_0 .. abar_T with abar_0 = 1, by explicit running product."""
    out = [1.0]
    for b in betas:
        out.append(out[-1] * (1.0 - b))
    return out


def step_posterior_oracle(x0: float, xt: float, t: int, betas: Sequence[float]) -> Tuple[float, float]:
    """q(x^{t-1} | x^t, x^0) for a scalar coordinate, via Bayes rule.

    Prior  x^{t-1} | x^0 ~ N(sqrt(abar_{t-1}) x0, 1 - abar_{t-1});
    likelihood x^t = sqrt(1 - beta_t) x^{t-1} + N(0, beta_t).
    """
    if t < 2:
        raise ValueError("the step posterior is degenerate at t = 1")
    abar = schedule_products(betas)
    prior = (math.sqrt(abar[t - 1]) * x0, 1.0 - abar[t - 1])
    return gaussian_posterior_oracle(prior, math.sqrt(1.0 - betas[t - 1]), betas[t - 1], xt)


def quadrature_kl(mu_q: float, var_q: float, mu_p: float, var_p: float) -> float:
    """1-D KL(N(mu_q, var_q) || N(mu_p, var_p)) by numerical integration."""
    sd = math.sqrt(max(var_q, var_p))
    lo = min(mu_q, mu_p) - 14.0 * sd
    hi = max(mu_q, mu_p) + 14.0 * sd

    def integrand(x: float) -> float:
        q = gaussian_pdf(x, mu_q, var_q)
        if q == 0.0:
            return 0.0
        log_q = -((x - mu_q) ** 2) / (2.0 * var_q) - 0.5 * math.log(2.0 * math.pi * var_q)
        log_p = -((x - mu_p) ** 2) / (2.0 * var_p) - 0.5 * math.log(2.0 * math.pi * var_p)
        return q * (log_q - log_p)

    value, _ = integrate.quad(integrand, lo, hi, points=[mu_q, mu_p], limit=200, epsabs=1e-13, epsrel=1e-11)
    return value


def diagonal_gaussian_entropy(log_var: Sequence[float]) -> float:
    return sum(0.5 * (1.0 + math.log(2.0 * math.pi) + lv) for lv in log_var)


# ─────────────────────────── point-set oracles ────────────────────────────

def _sqdist(p: Sequence[float], q: Sequence[float]) -> float:
    return sum((float(a) - float(b)) ** 2 for a, b in zip(p, q))


def exhaustive_chamfer(X: Sequence[Sequence[float]], Y: Sequence[Sequence[float]]) -> float:
    forward = sum(min(_sqdist(x, y) for y in Y) for x in X) / len(X)
    backward = sum(min(_sqdist(y, x) for x in X) for y in Y) / len(Y)
    return forward + backward


def brute_force_assignment(X: Sequence[Sequence[float]], Y: Sequence[Sequence[float]]) -> Tuple[float, Tuple[int, ...]]:
    """Minimum mean Euclidean matching cost over all bijections; ties keep the first permutation."""
    n = len(X)
    if n != len(Y):
        raise ValueError(f"need equal sizes, got {n} and {len(Y)}")
    if n > MAX_ASSIGNMENT_SIZE:
        raise ValueError(f"brute force capped at {MAX_ASSIGNMENT_SIZE} points, got {n}")
    cost = [[math.sqrt(_sqdist(x, y)) for y in Y] for x in X]
    best, best_perm = math.inf, tuple(range(n))
    for perm in itertools.permutations(range(n)):
        total = sum(cost[i][perm[i]] for i in range(n)) / n
        if total < best:
            best, best_perm = total, perm
    return best, best_perm


def brute_force_mmd(Sg, Sr, D: Callable) -> float:
    return sum(min(D(x, y) for x in Sg) for y in Sr) / len(Sr)


def brute_force_coverage(Sg, Sr, D: Callable) -> float:
    hits = set()
    for x in Sg:
        dists = [D(x, y) for y in Sr]
        hits.add(dists.index(min(dists)))
    return len(hits) / len(Sr)


def brute_force_one_nna(Sg, Sr, D: Callable) -> float:
    pooled = [(c, 0) for c in Sg] + [(c, 1) for c in Sr]
    correct = 0
    for i, (ci, li) in enumerate(pooled):
        best, label = math.inf, None
        for j, (cj, lj) in enumerate(pooled):
            if i == j:
                continue
            d = D(ci, cj)
            if d < best:
                best, label = d, lj
        correct += int(label == li)
    return correct / len(pooled)


def hand_jsd(p: Sequence[float], q: Sequence[float]) -> float:
    """JSD in nats of two count vectors, with 0 ln 0 = 0."""
    sp, sq = float(sum(p)), float(sum(q))
    p = [v / sp for v in p]
    q = [v / sq for v in q]
    total = 0.0
    for pi, qi in zip(p, q):
        mi = 0.5 * (pi + qi)
        if pi > 0:
            total += 0.5 * pi * math.log(pi / mi)
        if qi > 0:
            total += 0.5 * qi * math.log(qi / mi)
    return total


def hand_voxel_counts(points: Sequence[Sequence[float]], grid: int) -> Dict[Tuple[int, int, int], int]:
    """Occupancy of a grid^3 partition of [-1, 1]^3; the upper face belongs to the last cell."""
    counts: Dict[Tuple[int, int, int], int] = {}
    for p in points:
        key = tuple(min(int((float(c) + 1.0) / 2.0 * grid), grid - 1) for c in p)
        counts[key] = counts.get(key, 0) + 1
    return counts


# ─────────────────────────── Monte-Carlo moments ──────────────────────────

@dataclass
class MomentReport:
    n: int
    mean: np.ndarray
    var: np.ndarray
    mean_band: np.ndarray
    var_band: np.ndarray

    def matches(self, target_mean, target_var, sigmas: float = 3.0) -> bool:
        mean_ok = np.all(np.abs(self.mean - np.asarray(target_mean)) <= self.mean_band * sigmas / 3.0 + 1e-15)
        var_ok = np.all(np.abs(self.var - np.asarray(target_var)) <= self.var_band * sigmas / 3.0 + 1e-15)
        return bool(mean_ok and var_ok)


def mc_moments(sampler: Callable[[int], np.ndarray], n: int, dims: int) -> MomentReport:
    """Sample mean and variance per dimension with 3-sigma standard-error bands.

    ``sampler(n)`` returns an (n, dims) array of independent draws.
    """
    if n < MIN_MC_SAMPLES:
        raise ValueError(f"need at least {MIN_MC_SAMPLES} samples, got {n}")
    draws = np.asarray(sampler(n), dtype=np.float64).reshape(n, dims)
    mean = draws.sum(axis=0) / n
    centered = draws - mean
    m2 = (centered ** 2).sum(axis=0) / n
    m4 = (centered ** 4).sum(axis=0) / n
    var = m2 * n / (n - 1)
    mean_se = np.sqrt(var / n)
    var_se = np.sqrt(np.maximum(m4 - m2 ** 2, 0.0) / n)
    return MomentReport(n=n, mean=mean, var=var, mean_band=3.0 * mean_se, var_band=3.0 * var_se)


# ─────────────────────────── finite differences ───────────────────────────

def central_difference_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        up = float(f(x))
        x[idx] = orig - h
        down = float(f(x))
        x[idx] = orig
        grad[idx] = (up - down) / (2.0 * h)
    return grad


def numerical_jacobian(f: Callable[[np.ndarray], np.ndarray], w: np.ndarray, h: float = 1e-6) -> np.ndarray:
    w = np.array(w, dtype=np.float64).reshape(-1)
    cols = []
    for j in range(w.size):
        e = np.zeros_like(w)
        e[j] = h
        up = np.asarray(f(w + e), dtype=np.float64).reshape(-1)
        down = np.asarray(f(w - e), dtype=np.float64).reshape(-1)
        cols.append((up - down) / (2.0 * h))
    return np.stack(cols, axis=1)


def log_abs_det(matrix: np.ndarray) -> float:
    sign, logdet = np.linalg.slogdet(matrix)
    if sign == 0:
        return -math.inf
    return float(logdet)
