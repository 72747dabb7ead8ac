import math

import numpy as np
import pytest

from autodiff import check_gradients
from config import TrainConfig
from pipeline.diffusion import (
    DiffusionSchedule,
    forward_chain,
    forward_marginal_sample,
    gaussian_kl,
    kl_term,
    make_schedule,
    posterior_coefficients,
    recon_loglik,
    reverse_chain,
    reverse_mean_from_eps,
    reverse_step,
    simplified_step_loss,
    true_posterior,
    variational_bound,
)
from pipeline.nets import Denoiser
from utils.errors import NonFiniteError, ScheduleError
from utils.rng import RngStream
from verify.oracles import (
    gaussian_logpdf,
    mc_moments,
    quadrature_kl,
    schedule_products,
    step_posterior_oracle,
)

N_MC = 100_000
SIGMAS = 4.0


def zero_denoiser(xt, t, z):
    return np.zeros_like(xt)


@pytest.fixture
def ten_step_schedule():
    return make_schedule(10, 1e-3, 0.3)


# ─────────────────────────── schedule ─────────────────────────────────────

def test_two_step_schedule_values(two_step_schedule):
    np.testing.assert_allclose(two_step_schedule.alpha_bar, [0.9, 0.72], atol=1e-15)
    np.testing.assert_allclose(two_step_schedule.alpha_bar, schedule_products([0.1, 0.2])[1:], atol=1e-15)
    assert two_step_schedule.gamma_at(2) == pytest.approx(0.1 / 0.28 * 0.2, abs=1e-14)
    assert two_step_schedule.gamma_at(2) == pytest.approx(0.0714286, abs=1e-7)
    assert two_step_schedule.gamma_at(1) == 0.0


def test_make_schedule_is_linear_inclusive():
    sched = make_schedule(2, 0.1, 0.2)
    np.testing.assert_allclose(sched.beta, [0.1, 0.2], atol=1e-15)
    np.testing.assert_allclose(sched.alpha_bar, schedule_products([0.1, 0.2])[1:], atol=1e-15)


def test_constant_schedule_is_geometric():
    sched = make_schedule(7, 0.05, 0.05)
    for t in range(1, 8):
        assert sched.alpha_bar_at(t) == pytest.approx(0.95 ** t, rel=1e-13)
    assert sched.alpha_bar_at(0) == 1.0


def test_default_schedule_reaches_terminal_gaussian():
    cfg = TrainConfig()
    sched = make_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    assert sched.alpha_bar[-1] < 0.05
    assert np.all(np.diff(sched.alpha_bar) < 0)
    assert np.all(np.diff(sched.beta) >= 0)


@pytest.mark.parametrize("T, lo, hi", [(1, 0.1, 0.2), (10, 0.0, 0.2), (10, 0.3, 0.2), (10, 0.1, 1.0)])
def test_schedule_range_violations(T, lo, hi):
    with pytest.raises(ScheduleError):
        make_schedule(T, lo, hi)


def test_weak_schedule_logs_warning(caplog):
    with caplog.at_level("WARNING", logger="pipeline.diffusion"):
        make_schedule(2, 0.1, 0.2)
    assert "alpha_bar_T" in caplog.text


@pytest.mark.parametrize("T, lo, hi", [(2, 0.1, 0.2), (10, 1e-3, 0.3), (100, 1e-4, 0.06), (50, 0.02, 0.02)])
def test_posterior_variance_below_beta(T, lo, hi):
    sched = make_schedule(T, lo, hi)
    t = np.arange(2, T + 1)
    assert np.all(sched.gamma_at(t) < sched.beta_at(t))


# ─────────────────────────── forward process ──────────────────────────────

def test_forward_marginal_zero_noise_limit():
    sched = DiffusionSchedule.from_betas([0.0, 0.0])
    x0 = np.array([[0.5, -1.0, 2.0]])
    xt, _ = forward_marginal_sample(x0, 2, sched, np.random.default_rng(0))
    np.testing.assert_array_equal(xt, x0)


def test_forward_marginal_coefficients(two_step_schedule):
    x0 = np.array([[1.0, 2.0, -3.0]])
    xt, eps = forward_marginal_sample(x0, 2, two_step_schedule, np.random.default_rng(5))
    np.testing.assert_allclose(xt, math.sqrt(0.72) * x0 + math.sqrt(0.28) * eps, atol=1e-12)
    assert math.sqrt(0.72) == pytest.approx(0.8485, abs=1e-4)


def test_forward_marginal_rejects_bad_t(two_step_schedule):
    x0 = np.zeros((2, 3))
    for t in (0, 3):
        with pytest.raises(ScheduleError):
            forward_marginal_sample(x0, t, two_step_schedule, np.random.default_rng(0))


def test_forward_marginal_is_reproducible(ten_step_schedule):
    x0 = np.random.default_rng(0).normal(size=(32, 3))
    a = forward_marginal_sample(x0, 4, ten_step_schedule, RngStream(9).child("fwd"))
    b = forward_marginal_sample(x0, 4, ten_step_schedule, RngStream(9).child("fwd"))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


@pytest.mark.slow
def test_forward_marginal_moments(two_step_schedule):
    x0 = np.array([0.3, -1.2, 2.0])
    rng = np.random.default_rng(11)
    report = mc_moments(
        lambda n: forward_marginal_sample(np.tile(x0, (n, 1)), 2, two_step_schedule, rng)[0], N_MC, 3
    )
    assert report.matches(math.sqrt(0.72) * x0, np.full(3, 0.28), sigmas=SIGMAS)


def test_forward_chain_with_zero_betas_is_identity():
    sched = DiffusionSchedule.from_betas([0.0] * 4)
    x0 = np.random.default_rng(1).normal(size=(5, 3))
    chain = forward_chain(x0, sched, np.random.default_rng(2))
    assert len(chain) == 4
    np.testing.assert_array_equal(chain[-1], x0)


@pytest.mark.slow
def test_forward_chain_matches_marginal_at_every_step(ten_step_schedule):
    x0 = np.tile([0.5, -0.5, 1.0], (N_MC, 1))
    chain = forward_chain(x0, ten_step_schedule, np.random.default_rng(3))
    for t, xt in enumerate(chain, start=1):
        ab = float(ten_step_schedule.alpha_bar_at(t))
        report = mc_moments(lambda n: xt[:n], N_MC, 3)
        assert report.matches(math.sqrt(ab) * x0[0], np.full(3, 1.0 - ab), sigmas=SIGMAS), t


@pytest.mark.slow
def test_forward_chain_terminal_variance_from_origin(ten_step_schedule):
    chain = forward_chain(np.zeros((N_MC, 3)), ten_step_schedule, np.random.default_rng(4))
    ab_T = float(ten_step_schedule.alpha_bar[-1])
    report = mc_moments(lambda n: chain[-1][:n], N_MC, 3)
    assert report.matches(np.zeros(3), np.full(3, 1.0 - ab_T), sigmas=SIGMAS)


# ─────────────────────────── posterior ────────────────────────────────────

def test_posterior_coefficients_two_steps(two_step_schedule):
    c0, ct = posterior_coefficients(2, two_step_schedule)
    assert c0 == pytest.approx(0.6776309, abs=1e-7)
    assert ct == pytest.approx(0.3194383, abs=1e-7)


def test_true_posterior_at_origin(two_step_schedule):
    mu, gamma = true_posterior(np.zeros(3), np.zeros(3), 2, two_step_schedule)
    np.testing.assert_array_equal(mu, np.zeros(3))
    assert gamma == pytest.approx(0.0714286, abs=1e-7)


def test_true_posterior_rejects_first_step(two_step_schedule):
    with pytest.raises(ScheduleError):
        true_posterior(np.zeros(3), np.zeros(3), 1, two_step_schedule)


@pytest.mark.parametrize("x0, xt", [(0.0, 0.0), (1.0, -0.5), (-2.3, 1.7), (0.4, 3.1)])
def test_true_posterior_agrees_with_bayes_rule(two_step_schedule, x0, xt):
    mu, gamma = true_posterior(np.array([x0]), np.array([xt]), 2, two_step_schedule)
    ref_mu, ref_var = step_posterior_oracle(x0, xt, 2, [0.1, 0.2])
    assert mu[0] == pytest.approx(ref_mu, abs=1e-12)
    assert gamma == pytest.approx(ref_var, abs=1e-12)


def random_schedule(rng) -> DiffusionSchedule:
    return DiffusionSchedule.from_betas(rng.uniform(0.01, 0.3, size=int(rng.integers(2, 21))))


def test_true_posterior_agrees_with_bayes_rule_on_random_draws():
    rng = np.random.default_rng(8)
    for _ in range(1000):
        sched = random_schedule(rng)
        t = int(rng.integers(2, sched.T + 1))
        x0, xt = rng.normal(scale=2.0, size=2)
        mu, gamma = true_posterior(np.array([x0]), np.array([xt]), t, sched)
        ref_mu, ref_var = step_posterior_oracle(x0, xt, t, list(sched.beta))
        assert mu[0] == pytest.approx(ref_mu, abs=1e-12)
        assert gamma == pytest.approx(ref_var, abs=1e-12)


def test_reverse_mean_examples(two_step_schedule):
    mu = reverse_mean_from_eps(np.array([[1.0, 0.0, 0.0]]), 2, np.array([[1.0, 0.0, 0.0]]), two_step_schedule)
    expected = (1.0 / math.sqrt(0.8)) * (1.0 - 0.2 / math.sqrt(0.28))
    np.testing.assert_allclose(mu, [[expected, 0.0, 0.0]], atol=1e-12)
    assert mu[0, 0] == pytest.approx(0.6953, abs=1e-3)

    still = DiffusionSchedule.from_betas([0.1, 0.0])
    xt = np.array([[0.2, 0.4, -0.6]])
    np.testing.assert_array_equal(reverse_mean_from_eps(xt, 2, np.zeros_like(xt), still), xt)


def test_exact_noise_reproduces_posterior_mean():
    rng = np.random.default_rng(9)
    for _ in range(1000):
        sched = random_schedule(rng)
        x0 = rng.normal(size=(4, 3))
        t = int(rng.integers(2, sched.T + 1))
        xt, eps = forward_marginal_sample(x0, t, sched, rng)
        mu_theta = reverse_mean_from_eps(xt, t, eps, sched)
        mu_t, _ = true_posterior(x0, xt, t, sched)
        np.testing.assert_allclose(mu_theta, mu_t, rtol=0, atol=1e-10)


# ─────────────────────────── reverse process ──────────────────────────────

def test_first_reverse_step_is_deterministic(ten_step_schedule):
    xt = np.random.default_rng(0).normal(size=(8, 3))
    a = reverse_step(xt, 1, None, zero_denoiser, ten_step_schedule, np.random.default_rng(1))
    b = reverse_step(xt, 1, None, zero_denoiser, ten_step_schedule, np.random.default_rng(2))
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(a, xt / math.sqrt(ten_step_schedule.alpha[0]), atol=1e-15)


def test_reverse_step_rejects_non_finite_denoiser(ten_step_schedule):
    def broken(xt, t, z):
        return np.full_like(xt, np.nan)

    with pytest.raises(NonFiniteError):
        reverse_step(np.zeros((4, 3)), 3, None, broken, ten_step_schedule, np.random.default_rng(0))


@pytest.mark.slow
@pytest.mark.parametrize("variance", ["beta", "gamma"])
def test_reverse_step_variance(two_step_schedule, variance):
    x = np.array([0.7, -0.2, 1.1])
    rng = np.random.default_rng(21)
    report = mc_moments(
        lambda n: reverse_step(np.tile(x, (n, 1)), 2, None, zero_denoiser, two_step_schedule, rng, variance),
        N_MC,
        3,
    )
    var = float(two_step_schedule.variance_at(2, variance))
    assert report.matches(x / math.sqrt(0.8), np.full(3, var), sigmas=SIGMAS)


def test_reverse_chain_shape_and_reproducibility(ten_step_schedule):
    a = reverse_chain(None, 17, zero_denoiser, ten_step_schedule, RngStream(3).child("chain"))
    b = reverse_chain(None, 17, zero_denoiser, ten_step_schedule, RngStream(3).child("chain"))
    assert a.shape == (17, 3)
    assert np.array_equal(a, b)


# ─────────────────────────── objective terms ──────────────────────────────

def test_gaussian_kl_examples():
    assert gaussian_kl([[1.0, 0.0, 0.0]], 0.2, [[0.0, 0.0, 0.0]], 0.2) == pytest.approx(2.5, abs=1e-12)
    assert gaussian_kl([[0.3, 0.3, 0.3]], 0.2, [[0.3, 0.3, 0.3]], 0.2) == 0.0


@pytest.mark.parametrize("mu_q, var_q, mu_p, var_p", [(0.3, 0.07, -0.2, 0.2), (0.0, 1.0, 1.0, 2.0), (1.5, 0.01, 1.4, 0.05)])
def test_gaussian_kl_matches_quadrature(mu_q, var_q, mu_p, var_p):
    value = gaussian_kl(np.array([[mu_q]]), var_q, np.array([[mu_p]]), var_p)
    assert value == pytest.approx(quadrature_kl(mu_q, var_q, mu_p, var_p), abs=1e-6)


def test_kl_term_is_sum_of_coordinate_slices(two_step_schedule):
    rng = np.random.default_rng(13)
    x0, xt, eps_hat = rng.normal(size=(3, 1, 3))
    value = kl_term(x0, xt, 2, eps_hat, two_step_schedule)
    mu_t, gamma = true_posterior(x0, xt, 2, two_step_schedule)
    mu_theta = reverse_mean_from_eps(xt, 2, eps_hat, two_step_schedule)
    ref = sum(quadrature_kl(mu_t[0, c], gamma, mu_theta[0, c], 0.2) for c in range(3))
    assert value == pytest.approx(ref, abs=1e-6)


def test_kl_term_is_non_negative(ten_step_schedule):
    rng = np.random.default_rng(14)
    for _ in range(50):
        t = int(rng.integers(2, 11))
        x0, xt, eps_hat = rng.normal(size=(3, 4, 3))
        assert kl_term(x0, xt, t, eps_hat, ten_step_schedule) >= 0.0
        assert kl_term(x0, xt, t, eps_hat, ten_step_schedule, variance="gamma") >= 0.0


def test_recon_loglik_zero_at_unit_density():
    b1 = 1.0 / (2.0 * math.pi)
    sched = DiffusionSchedule.from_betas([b1, 0.3])
    x1 = np.random.default_rng(0).normal(size=(6, 3))
    x0 = x1 / math.sqrt(1.0 - b1)
    assert recon_loglik(x0, x1, None, zero_denoiser, sched) == pytest.approx(0.0, abs=1e-12)


def test_recon_loglik_matches_density_oracle():
    sched = DiffusionSchedule.from_betas([0.3, 0.4])
    rng = np.random.default_rng(15)
    x1 = rng.normal(size=(5, 3))
    mu = x1 / math.sqrt(0.7)
    x0 = mu + 0.3 * rng.normal(size=(5, 3))
    ref = sum(gaussian_logpdf(x0[i], mu[i], 0.3) for i in range(5))
    assert recon_loglik(x0, x1, None, zero_denoiser, sched) == pytest.approx(ref, rel=1e-12)


def test_recon_loglik_decreases_with_distance(ten_step_schedule):
    x1 = np.zeros((1, 3))
    values = [
        recon_loglik(np.array([[r, 0.0, 0.0]]), x1, None, zero_denoiser, ten_step_schedule)
        for r in (0.0, 0.1, 0.5, 1.0, 3.0)
    ]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_simplified_loss_with_perfect_predictor(ten_step_schedule):
    x0 = np.random.default_rng(16).normal(size=(12, 3))
    sched = ten_step_schedule

    def oracle_denoiser(xt, t, z):
        ab = float(sched.alpha_bar_at(t))
        return (xt - math.sqrt(ab) * x0) / math.sqrt(1.0 - ab)

    loss = simplified_step_loss(x0, None, oracle_denoiser, sched, np.random.default_rng(17))
    assert loss.item() < 1e-24


def test_simplified_loss_scale_by_T(ten_step_schedule):
    x0 = np.random.default_rng(18).normal(size=(4, 3))
    plain = simplified_step_loss(x0, None, zero_denoiser, ten_step_schedule, np.random.default_rng(19))
    scaled = simplified_step_loss(x0, None, zero_denoiser, ten_step_schedule, np.random.default_rng(19), scale_by_T=True)
    assert scaled.item() == pytest.approx(10.0 * plain.item(), rel=1e-14)


def test_simplified_loss_per_point_t(ten_step_schedule):
    x0 = np.random.default_rng(20).normal(size=(9, 3))
    loss = simplified_step_loss(x0, None, zero_denoiser, ten_step_schedule, np.random.default_rng(21), per_point_t=True)
    assert np.isfinite(loss.item())


@pytest.mark.slow
def test_zero_denoiser_loss_expectation(ten_step_schedule):
    x0 = np.array([[0.1, 0.2, 0.3]])
    rng = np.random.default_rng(22)

    def draws(n):
        return np.array([simplified_step_loss(x0, None, zero_denoiser, ten_step_schedule, rng).item() for _ in range(n)])

    report = mc_moments(draws, N_MC, 1)
    # mean of three chi-square(1) coordinates
    assert report.matches([1.0], [2.0 / 3.0], sigmas=SIGMAS)


def test_variational_bound_parts(ten_step_schedule):
    x0 = np.random.default_rng(23).normal(size=(6, 3))
    bound = variational_bound(x0, None, zero_denoiser, ten_step_schedule, RngStream(5).child("bound"))
    assert set(bound) == {"prior", "kl", "recon_nll", "total"}
    assert bound["prior"] >= 0.0 and bound["kl"] >= 0.0
    assert bound["total"] == pytest.approx(bound["prior"] + bound["kl"] + bound["recon_nll"], rel=1e-14)
    again = variational_bound(x0, None, zero_denoiser, ten_step_schedule, RngStream(5).child("bound"))
    assert again == bound


def test_simplified_loss_gradient_check():
    rng = np.random.default_rng(24)
    den = Denoiser(4, RngStream(24), hidden=8, layers=2, time_dim=8)
    den.out.weight.value = rng.normal(scale=0.3, size=den.out.weight.shape)
    den.out.bias.value = rng.normal(scale=0.3, size=den.out.bias.shape)
    x0 = rng.normal(size=(8, 3))
    z = rng.normal(size=(1, 4))
    sched = make_schedule(10, 1e-3, 0.3)

    def f():
        return simplified_step_loss(x0, z, den, sched, np.random.default_rng(25))

    assert check_gradients(f, dict(den.named_parameters())) < 1e-4
