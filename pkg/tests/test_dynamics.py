import math

import numpy as np
import pytest

from eddy.checks import ou_moment_error
from eddy.dynamics import (DriftField, IntegrationError, ParticleBatch, em_update, euler_maruyama_step,
                           ot_conditional_mean, ot_path_marginal, otfm_drift, score_from_velocity,
                           vp_reverse_drift)
from eddy.targets import GaussianMixture, VPSchedule, noised_mixture, ring_mixture


def test_particle_batch_validation():
    b = ParticleBatch(np.zeros((3, 2)))
    assert (b.n, b.dim) == (3, 2)
    with pytest.raises(ValueError):
        b.positions[0, 0] = 1.0
    with pytest.raises(ValueError):
        ParticleBatch(np.zeros(3))
    with pytest.raises(ValueError):
        ParticleBatch(np.array([[np.nan, 0.0]]))


def test_vp_drift_formula():
    gm, s = ring_mixture(), VPSchedule()
    f = vp_reverse_drift(gm, s)
    x = np.random.default_rng(0).normal(size=(6, 2))
    t = 0.3
    beta = s.beta(t)
    np.testing.assert_allclose(f.drift(x, t), 0.5 * beta * x + beta * noised_mixture(gm, s, t).score(x))
    np.testing.assert_allclose(f.volatility(t), math.sqrt(beta))


def test_ot_conditional_mean_single_gaussian():
    # x1 ~ N(c, v I): E[x1 | x_t] = c + t v (x - t c) / (t^2 v + (1 - t)^2)
    c, v, t = np.array([1.0, -2.0]), 0.5, 0.4
    gm = GaussianMixture(c[None], np.array([1.0]), v)
    x = np.array([0.3, 0.7])
    expected = c + t * v * (x - t * c) / (t * t * v + (1 - t) ** 2)
    np.testing.assert_allclose(ot_conditional_mean(gm, x, t), expected)


def test_ot_conditional_mean_monte_carlo():
    gm = ring_mixture(variance=0.5)
    rng = np.random.default_rng(1)
    t = 0.5
    x1 = gm.sample(400_000, rng)
    xt = t * x1 + (1 - t) * rng.standard_normal(x1.shape)
    query = np.array([1.0, 1.5])
    near = np.linalg.norm(xt - query, axis=1) < 0.1
    np.testing.assert_allclose(ot_conditional_mean(gm, query, t), x1[near].mean(0), atol=0.1)


def test_ot_drift_singular_at_one():
    with pytest.raises(ValueError):
        otfm_drift(ring_mixture()).drift(np.zeros(2), 1.0)
    with pytest.raises(ValueError):
        score_from_velocity(np.zeros(2), np.zeros(2), 1.0)


@pytest.mark.parametrize("t", [0.1, 0.5, 0.9])
def test_tweedie_roundtrip(t):
    gm = ring_mixture(variance=0.8)
    x = np.random.default_rng(2).normal(scale=3, size=(25, 2))
    f = otfm_drift(gm)
    np.testing.assert_allclose(score_from_velocity(f.drift(x, t), x, t), ot_path_marginal(gm, t).score(x),
                               rtol=1e-5, atol=1e-9)
    np.testing.assert_allclose(f.score(x, t), ot_path_marginal(gm, t).score(x), rtol=1e-5, atol=1e-9)


def test_em_update_expression():
    x, mu, psi, xi = np.ones(2), np.array([1.0, 2.0]), np.array([0.5, 0.0]), np.array([1.0, -1.0])
    np.testing.assert_allclose(em_update(x, mu, psi, 2.0, 0.25, xi), x + (mu + psi) * 0.25 + 1.0 * xi)
    np.testing.assert_allclose(em_update(x, mu, None, 0.0, 0.25, xi), x + mu * 0.25)


def test_step_uses_noise_in_particle_order():
    f = DriftField(lambda x, t: np.zeros_like(x), lambda t: 1.0)
    b = ParticleBatch(np.zeros((3, 2)))
    out = euler_maruyama_step(b, f, dt=0.04, rng=np.random.default_rng(5))
    expected = 0.2 * np.random.default_rng(5).standard_normal((3, 2))
    np.testing.assert_array_equal(out.positions, expected)
    assert out.step == 1 and out.time == pytest.approx(0.04)


def test_step_determinism():
    f = vp_reverse_drift(ring_mixture(), VPSchedule())
    b = ParticleBatch(np.random.default_rng(0).normal(size=(5, 2)))
    a1 = euler_maruyama_step(b, f, dt=0.01, rng=np.random.default_rng(9))
    a2 = euler_maruyama_step(b, f, dt=0.01, rng=np.random.default_rng(9))
    assert a1.positions.tobytes() == a2.positions.tobytes()


def test_step_reports_non_finite():
    f = DriftField(lambda x, t: np.where(np.arange(x.shape[0])[:, None] == 2, np.inf, 0.0) * np.ones_like(x),
                   lambda t: 0.0)
    with pytest.raises(IntegrationError) as info:
        euler_maruyama_step(ParticleBatch(np.zeros((4, 2)), time=0.5, step=7), f, dt=0.1)
    err = info.value
    assert (err.particle, err.step, err.time) == (2, 7, 0.5)
    assert "particle 2" in str(err)


def test_step_rejects_bad_guidance_shape():
    f = DriftField(lambda x, t: np.zeros_like(x), lambda t: 0.0)
    with pytest.raises(ValueError):
        euler_maruyama_step(ParticleBatch(np.zeros((3, 2))), f, guidance=np.zeros((2, 2)))


def test_weak_accuracy_first_order():
    errs = [max(ou_moment_error(t, n_paths=200_000, seed=t)) for t in (10, 20, 40)]
    for t, e in zip((10, 20, 40), errs):
        assert e <= 1.0 / t + 0.01


def test_vp_reverse_sde_recovers_target():
    gm, s = ring_mixture(), VPSchedule()
    f = vp_reverse_drift(gm, s)
    rng = np.random.default_rng(3)
    x = rng.standard_normal((20000, 2))
    steps = 200
    for k in range(steps):
        t = k / steps
        x = em_update(x, f.drift(x, t), None, f.volatility(t), 1 / steps, rng.standard_normal(x.shape))
    np.testing.assert_allclose(np.linalg.norm(x, axis=1).mean(), np.linalg.norm(gm.sample(20000, rng), axis=1).mean(),
                               rtol=0.02)


def test_ot_ode_transports_gaussian():
    # for a Gaussian target the OT flow is affine; check mean and variance of the endpoint
    gm = GaussianMixture(np.array([[2.0, -1.0]]), np.array([1.0]), 0.25)
    f = otfm_drift(gm)
    x = np.random.default_rng(4).standard_normal((20000, 2))
    steps = 400
    for k in range(steps):
        x = em_update(x, f.drift(x, k / steps), None, 0.0, 1 / steps, np.zeros_like(x))
    np.testing.assert_allclose(x.mean(0), [2.0, -1.0], atol=0.02)
    np.testing.assert_allclose(x.var(0), 0.25, rtol=0.05)
