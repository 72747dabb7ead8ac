import numpy as np
import pytest

from data.dataset import sample_cloud
from pipeline.sampling import Sampler, generate, interpolate, reconstruct
from pipeline.train import Trainer
from tests.conftest import tiny_config
from utils.errors import FlowMissingError, ModeMismatchError
from utils.rng import RngStream
from verify.oracles import mc_moments


def untrained_checkpoint(mode="generator", **extra):
    cfg = tiny_config(mode, **extra)
    clouds = [sample_cloud("sphere", 1, 16), sample_cloud("torus", 2, 16)]
    return Trainer(cfg, clouds).run(steps=0)


@pytest.fixture(scope="module")
def trained_generator():
    cfg = tiny_config("generator", steps=5)
    clouds = [sample_cloud(f, 10 + i, 16) for i, f in enumerate(("sphere", "torus", "cluster", "sphere"))]
    return Trainer(cfg, clouds).run()


@pytest.fixture(scope="module")
def pair():
    return sample_cloud("sphere", 21, 16), sample_cloud("torus", 22, 16)


# ─────────────────────────── generate ─────────────────────────────────────

def test_generate_shape_and_determinism(trained_generator):
    a = generate(trained_generator, 3, 20, RngStream(5))
    b = generate(trained_generator, 3, 20, RngStream(5))
    assert len(a) == 3
    assert all(c.shape == (20, 3) for c in a)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)
    c = generate(trained_generator, 3, 20, RngStream(6))
    assert not np.array_equal(a[0], c[0])


def test_generate_requires_generator_checkpoint():
    with pytest.raises(ModeMismatchError):
        generate(untrained_checkpoint("autoencoder"), 1, 8, RngStream(0))


def test_generate_without_flow_uses_standard_normal_latents():
    ckpt = untrained_checkpoint("generator", prior="normal")
    assert not ckpt.has_flow()
    clouds = generate(ckpt, 2, 8, RngStream(1))
    assert all(np.all(np.isfinite(c)) for c in clouds)


@pytest.mark.slow
def test_untrained_generator_matches_noise_chain_variance():
    ckpt = untrained_checkpoint("generator")
    sched = ckpt.schedule
    # eps_hat = 0: x^{t-1} = x^t / sqrt(alpha_t) + sqrt(beta_t) n for t >= 2, no noise at t = 1
    var = 1.0
    for t in range(sched.T, 0, -1):
        var = var / float(sched.alpha[t - 1]) + (float(sched.beta[t - 1]) if t >= 2 else 0.0)

    n = 100_000
    cloud = generate(ckpt, 1, n, RngStream(2))[0]
    report = mc_moments(lambda k: cloud[:k], n, 3)
    assert report.matches(np.zeros(3), np.full(3, var), sigmas=4.0)


# ─────────────────────────── reconstruct ──────────────────────────────────

def test_reconstruct_is_resolution_free_and_deterministic(trained_generator, pair):
    a, _ = pair
    first = reconstruct(trained_generator, a, 40, RngStream(7))
    second = reconstruct(trained_generator, a, 40, RngStream(7))
    assert first.shape == (40, 3)
    assert np.array_equal(first, second)


def test_reconstruct_works_for_autoencoders(pair):
    a, _ = pair
    out = reconstruct(untrained_checkpoint("autoencoder"), a, 16, RngStream(8))
    assert out.shape == (16, 3) and np.all(np.isfinite(out))


# ─────────────────────────── interpolate ──────────────────────────────────

def test_interpolation_lambda_grid(trained_generator, pair):
    a, b = pair
    lams, frames = interpolate(trained_generator, a, b, 5, 0.25, RngStream(9))
    np.testing.assert_allclose(lams, [-0.25, 0.125, 0.5, 0.875, 1.25], atol=1e-15)
    assert len(frames) == 5
    assert all(f.shape == a.shape for f in frames)


def test_interpolation_endpoints_are_reconstructions(trained_generator, pair):
    a, b = pair
    sampler = Sampler.from_checkpoint(trained_generator)
    lams, frames = sampler.interpolate(a, b, 3, 0.0, 16, RngStream(10))
    assert list(lams) == [0.0, 0.5, 1.0]
    assert np.array_equal(frames[0], sampler.reconstruct(a, 16, RngStream(10)))
    assert np.array_equal(frames[-1], sampler.reconstruct(b, 16, RngStream(10)))


def test_interpolation_between_equal_latents_is_constant(trained_generator, pair):
    a, _ = pair
    _, frames = interpolate(trained_generator, a, a, 3, 0.0, RngStream(11))
    assert np.array_equal(frames[1], frames[0])
    assert np.array_equal(frames[1], frames[2])


def test_identity_flow_makes_w_and_z_interpolation_agree(pair):
    a, b = pair
    w_space = Sampler.from_checkpoint(untrained_checkpoint("generator"))
    z_space = Sampler.from_checkpoint(untrained_checkpoint("generator", interp_space="z"))
    _, lat_w = w_space.interpolation_latents(a, b, 4, 0.5)
    _, lat_z = z_space.interpolation_latents(a, b, 4, 0.5)
    for u, v in zip(lat_w, lat_z):
        np.testing.assert_allclose(u, v, atol=1e-12)


def test_w_space_interpolation_needs_a_flow(pair):
    a, b = pair
    ckpt = untrained_checkpoint("autoencoder")
    with pytest.raises(FlowMissingError):
        interpolate(ckpt, a, b, 3, 0.0, RngStream(12))
    z_ckpt = untrained_checkpoint("autoencoder", interp_space="z")
    _, frames = interpolate(z_ckpt, a, b, 3, 0.0, RngStream(12))
    assert len(frames) == 3


def test_w_space_interpolation_of_equal_clouds_still_needs_a_flow(pair):
    a, _ = pair
    ckpt = untrained_checkpoint("autoencoder")
    with pytest.raises(FlowMissingError):
        interpolate(ckpt, a, a.copy(), 3, 0.0, RngStream(12))


def test_interpolation_needs_two_steps(trained_generator, pair):
    a, b = pair
    with pytest.raises(ValueError):
        interpolate(trained_generator, a, b, 1, 0.0, RngStream(13))
