import math

import numpy as np
import pytest

from sada.denoiser import GaussianMixture
from sada.errors import InsufficientSamplesError, ScheduleDomainError
from sada.schedule import NoiseSchedule, expected_mean_check, flow_gradient


def test_vp_linear_alpha_bar_frozen(vp):
    assert vp.alpha_bar(0.5) == pytest.approx(0.07906381245316065, rel=1e-14)
    assert vp.alpha_bar(0.0) == 1.0


def test_vp_linear_matches_discrete_product(vp):
    # discrete DDPM schedule with T=1000 linear betas
    betas = np.linspace(1e-4, 0.02, 1000)
    discrete = np.prod(1.0 - betas[:500])
    assert vp.alpha_bar(0.5) == pytest.approx(discrete, rel=0.01)


@pytest.mark.parametrize("t", [0.05, 0.3, 0.5, 0.8, 0.95])
def test_vp_drift_and_diffusion_closed_forms(vp, t):
    # vp-linear: f = -beta/2 and g^2 = beta
    assert vp.drift(t) == pytest.approx(-0.5 * vp.beta(t), rel=1e-6)
    assert vp.diffusion_sq(t) == pytest.approx(vp.beta(t), rel=1e-6)


@pytest.mark.parametrize("t", [0.1, 0.4, 0.7])
def test_flow_closed_forms(flow, t):
    assert flow.signal(t) == pytest.approx(1 - t)
    assert flow.sigma(t) == pytest.approx(t)
    assert flow.alpha_bar(t) == pytest.approx((1 - t) ** 2)
    assert flow.drift(t) == pytest.approx(-1 / (1 - t), rel=1e-6)
    assert flow.diffusion_sq(t) == pytest.approx(2 * t + 2 * t * t / (1 - t), rel=1e-6)


@pytest.mark.parametrize("t", [0.2, 0.5, 0.9])
def test_flow_pf_ode_equals_velocity(flow, t, rng):
    # for the linear path the PF-ODE velocity is (eps - x) / (1 - t)
    x, eps = rng.standard_normal(5), rng.standard_normal(5)
    np.testing.assert_allclose(flow.pf_ode_gradient(x, eps, t), (eps - x) / (1 - t), rtol=1e-6)


@pytest.mark.parametrize("t", [0.1, 0.5, 0.9])
def test_vp_unit_gaussian_is_stationary(vp, t, rng):
    # unit-variance data: eps* = sigma x, and the PF-ODE velocity vanishes
    x = rng.standard_normal(6)
    y = vp.pf_ode_gradient(x, vp.sigma(t) * x, t)
    np.testing.assert_allclose(y, 0.0, atol=1e-6 * vp.beta(t))


def test_cosine_schedule_endpoints():
    c = NoiseSchedule("vp-cosine")
    assert c.alpha_bar(0.0) == pytest.approx(1.0)
    assert c.alpha_bar(0.5) == pytest.approx(0.49384359044063775, rel=1e-12)
    assert c.alpha_bar(1.0) == pytest.approx(0.0, abs=1e-8)


def test_data_noise_roundtrip(vp, rng):
    x0, eps = rng.standard_normal(8), rng.standard_normal(8)
    xt = vp.forward_noise(x0, eps, 0.4)
    np.testing.assert_allclose(vp.data_prediction(xt, eps, 0.4), x0, rtol=1e-12)
    np.testing.assert_allclose(vp.noise_from_data(xt, x0, 0.4), eps, rtol=1e-12)


def test_log_snr_frozen(vp):
    assert vp.log_snr(0.5) == pytest.approx(-1.2275677344107874, rel=1e-13)


def test_grid_uniform_and_excludes_endpoints(vp):
    g = vp.grid(4)
    np.testing.assert_allclose(g.times, [0.999, 0.7495, 0.5, 0.2505, 0.001])
    assert g.dt == pytest.approx(0.2495)
    assert len(g) == 4


def test_domain_errors(vp, flow):
    with pytest.raises(ScheduleDomainError):
        vp.alpha_bar(1.5)
    with pytest.raises(ScheduleDomainError):
        vp.pf_ode_gradient(np.ones(2), np.ones(2), 0.0)
    with pytest.raises(ScheduleDomainError):
        flow.log_snr(1.0)
    with pytest.raises(ValueError):
        NoiseSchedule("bogus")
    with pytest.raises(ValueError):
        NoiseSchedule(beta_range=(0.02, 1e-4))


def test_flow_gradient_passthrough():
    u = [1.0, -2.0]
    np.testing.assert_array_equal(flow_gradient(u), u)


def test_expected_mean_check_small(vp):
    gmm = GaussianMixture.random(4, 3, seed=1)
    emp, pred, se = expected_mean_check(20_000, 0.3, gmm, vp, rng=5)
    assert np.all(np.abs(emp - pred) <= 4 * se)


def test_expected_mean_check_needs_samples(vp, gmm):
    with pytest.raises(InsufficientSamplesError):
        expected_mean_check(99, 0.5, gmm, vp)


def test_signal_sigma_vp_identity(vp):
    for t in np.linspace(0.01, 0.99, 7):
        assert vp.signal(t) ** 2 + vp.sigma(t) ** 2 == pytest.approx(1.0)
    assert math.isclose(vp.signal(0.5), math.sqrt(vp.alpha_bar(0.5)))


@pytest.mark.parametrize("kind", ["vp-linear", "vp-cosine", "flow-linear"])
def test_drift_and_diffusion_match_independent_differences(kind):
    # f = d/dt log sqrt(alpha_bar) and g^2 = d(sigma^2)/dt - 2 f sigma^2, differenced at a wider step
    s = NoiseSchedule(kind)
    t, h = 0.5, 1e-4
    f_ref = (math.log(s.signal(t + h)) - math.log(s.signal(t - h))) / (2 * h)
    g2_ref = (s.sigma(t + h) ** 2 - s.sigma(t - h) ** 2) / (2 * h) - 2 * f_ref * s.sigma(t) ** 2
    assert s.drift(t) == pytest.approx(f_ref, rel=1e-6)
    assert s.diffusion_sq(t) == pytest.approx(g2_ref, rel=1e-6)


def test_pf_ode_zero_noise_is_pure_drift(vp):
    x = np.array([0.3, -1.0])
    np.testing.assert_array_equal(vp.pf_ode_gradient(x, np.zeros(2), 0.4), vp.drift(0.4) * x)
