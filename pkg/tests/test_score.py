import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from agd.diffusion import forward_noise
from agd.score import (
    GaussianMixtureWorld,
    build_world,
    gmm_eps_predict,
    log_marginal,
    sample_clean,
)


def _noisy_point(world, schedule, t, seed):
    rng = np.random.default_rng(seed)
    x0 = sample_clean(world, int(rng.integers(world.K)), rng)
    return forward_noise(x0, t, rng.standard_normal(world.shape), schedule)


def _fd_grad(world, schedule, x, t, h=1e-5):
    d = x.size
    basis = np.eye(d).reshape((d,) + x.shape)
    up = log_marginal(x + h * basis, t, world, schedule)
    dn = log_marginal(x - h * basis, t, world, schedule)
    return ((up - dn) / (2 * h)).reshape(x.shape)


def test_world_validation():
    protos = np.zeros((2, 4, 4))
    with pytest.raises(ValueError):
        GaussianMixtureWorld(protos, np.array([0.6, 0.6]), 0.1)
    with pytest.raises(ValueError):
        GaussianMixtureWorld(protos, np.array([0.5, 0.5]), -0.1)
    with pytest.raises(ValueError):
        GaussianMixtureWorld(protos, np.array([1.0]), 0.1)
    with pytest.raises(ValueError):
        build_world(names=("hgrad", "nope"))


def test_default_world_layout(world):
    assert world.K == 4 and world.shape == (16, 16)
    assert world.names == ("hgrad", "vgrad", "blob", "stripes")
    assert world.sigma0 == 0.05
    assert np.all((world.prototypes >= 0) & (world.prototypes <= 1))


def test_sample_clean_basics(world):
    w0 = build_world(sigma0=0.0)
    np.testing.assert_array_equal(sample_clean(w0, 3, 1), w0.prototypes[3])
    assert np.array_equal(sample_clean(world, 1, 42), sample_clean(world, 1, 42))
    with pytest.raises(ValueError):
        sample_clean(world, 4, 0)


def test_sample_clean_monte_carlo_mean(world):
    # oracle: exact mean of a normal clamped to [0, 1]
    label, n, s = 2, 10_000, world.sigma0
    rng = np.random.default_rng(2024)
    mean = np.mean([sample_clean(world, label, rng) for _ in range(n)], axis=0)
    mu = world.prototypes[label]
    a, b = (0 - mu) / s, (1 - mu) / s
    exact = mu * (norm.cdf(b) - norm.cdf(a)) + s * (norm.pdf(a) - norm.pdf(b)) + (1 - norm.cdf(b))
    assert np.max(np.abs(mean - exact)) < 3 * s / 100


def test_single_gaussian_closed_form(schedule, rng):
    w = build_world(names=("blob",), sigma0=0.0)
    mu = w.prototypes[0]
    for t in (1, 5, 50, 100):
        eps = rng.standard_normal(w.shape)
        x = forward_noise(mu, t, eps, schedule)
        np.testing.assert_allclose(gmm_eps_predict(x, t, w, schedule), eps, rtol=0, atol=1e-9)


@pytest.mark.parametrize("t", [1, 10, 50, 100])
def test_eps_matches_finite_difference_score(world, schedule, t):
    worst = 0.0
    for seed in range(t, t + 13 if t != 100 else t + 11):  # 13+13+13+11 = 50 points
        x = _noisy_point(world, schedule, t, seed)
        analytic = -gmm_eps_predict(x, t, world, schedule) / np.sqrt(1 - schedule.alpha_bar(t))
        numeric = _fd_grad(world, schedule, x, t)
        worst = max(worst, np.linalg.norm(numeric - analytic) / np.linalg.norm(analytic))
    assert worst < 1e-5


@settings(max_examples=10, deadline=None)
@given(t=st.integers(1, 100), seed=st.integers(0, 2**31 - 1))
def test_gradient_consistency_property(world, schedule, t, seed):
    x = _noisy_point(world, schedule, t, seed)
    eps = gmm_eps_predict(x, t, world, schedule)
    numeric = -np.sqrt(1 - schedule.alpha_bar(t)) * _fd_grad(world, schedule, x, t)
    assert np.linalg.norm(numeric - eps) / np.linalg.norm(eps) < 1e-5


def test_terminal_noise_is_standard_normal(world, schedule):
    T, n = schedule.T, 10_000
    rng = np.random.default_rng(7)
    labels = rng.integers(world.K, size=n)
    x0 = np.clip(world.prototypes[labels] + world.sigma0 * rng.standard_normal((n,) + world.shape), 0, 1)
    xT = forward_noise(x0, T, rng.standard_normal(x0.shape), schedule)
    eps = gmm_eps_predict(xT, T, world, schedule)
    assert np.max(np.abs(eps.mean(axis=0))) < 0.05
    assert np.max(np.abs(eps.var(axis=0) - 1.0)) < 0.05


def test_batched_prediction_matches_single(world, schedule, rng):
    xs = rng.standard_normal((5,) + world.shape)
    batch = gmm_eps_predict(xs, 30, world, schedule)
    for i in range(5):
        np.testing.assert_allclose(batch[i], gmm_eps_predict(xs[i], 30, world, schedule), rtol=1e-13, atol=1e-13)


def test_log_marginal_peak_value(schedule):
    w = build_world(names=("vgrad",), sigma0=0.05)
    t = 20
    ab = schedule.alpha_bar(t)
    v = ab * 0.05**2 + 1 - ab
    peak = log_marginal(np.sqrt(ab) * w.prototypes[0], t, w, schedule)
    assert peak == pytest.approx(-(256 / 2) * np.log(2 * np.pi * v), rel=1e-13)


def test_log_marginal_decreases_radially(schedule, rng):
    w = build_world(names=("blob",), sigma0=0.05)
    t = 10
    centre = np.sqrt(schedule.alpha_bar(t)) * w.prototypes[0]
    direction = rng.standard_normal(w.shape)
    vals = [log_marginal(centre + r * direction, t, w, schedule) for r in np.linspace(0, 1, 12)]
    assert np.all(np.diff(vals) < 0)


def _naive_log_density(x, t, world, schedule):
    mpmath.mp.dps = 40
    ab = mpmath.mpf(schedule.alpha_bar(t))
    v = ab * mpmath.mpf(world.sigma0) ** 2 + 1 - ab
    total = mpmath.mpf(0)
    for wk, mu in zip(world.weights, world.prototypes):
        dens = mpmath.mpf(wk)
        for xi, mi in zip(x.ravel(), mu.ravel()):
            dens *= mpmath.npdf(mpmath.mpf(xi), mpmath.sqrt(ab) * mpmath.mpf(mi), mpmath.sqrt(v))
        total += dens
    return float(mpmath.log(total))


@pytest.mark.parametrize("t", [1, 5, 30, 100])
def test_log_marginal_matches_naive_sum(world, schedule, t):
    for seed in range(5):  # 4 steps x 5 = 20 points
        x = _noisy_point(world, schedule, t, 1000 + seed)
        assert log_marginal(x, t, world, schedule) == pytest.approx(_naive_log_density(x, t, world, schedule), rel=1e-10)


def test_shift_equivariance_single_component(schedule, rng):
    t, c = 15, 0.37
    ab = schedule.alpha_bar(t)
    w = build_world(names=("hgrad",), sigma0=0.05)
    shifted = GaussianMixtureWorld(w.prototypes + c / np.sqrt(ab), w.weights, w.sigma0)
    x = rng.standard_normal(w.shape)
    np.testing.assert_allclose(
        gmm_eps_predict(x + c, t, shifted, schedule), gmm_eps_predict(x, t, w, schedule), rtol=0, atol=1e-12
    )


def test_predictor_errors(world, schedule):
    with pytest.raises(IndexError):
        gmm_eps_predict(np.zeros(world.shape), 0, world, schedule)
    with pytest.raises(ValueError):
        gmm_eps_predict(np.zeros((8, 8)), 3, world, schedule)
