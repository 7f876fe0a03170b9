import numpy as np
import pytest

from fisherflow import edh_flow
from fisherflow import experiments
from fisherflow import gaussian_core
from fisherflow import integrator
from fisherflow import quadrature
from fisherflow import targets


@pytest.fixture
def model():
    return experiments.linear_model()


def test_lambda_schedule():
    assert edh_flow.lambda_schedule(0.0) == 0.0
    assert edh_flow.lambda_schedule(1.0) == pytest.approx(1.0 - np.exp(-1.0))
    assert edh_flow.lambda_schedule(50.0) < 1.0
    with pytest.raises(ValueError):
        edh_flow.lambda_schedule(-0.1)


def test_transient_endpoints(model):
    start = edh_flow.transient_params(model, 0.0)
    assert np.allclose(start.get_mean(), model.get_prior().get_mean())
    assert np.allclose(start.get_cov(), model.get_prior().get_cov())
    end = edh_flow.transient_params(model, 1.0)
    posterior = targets.kalman_posterior(model)
    assert np.allclose(end.get_mean(), posterior.get_mean())
    assert np.allclose(end.get_cov(), posterior.get_cov())


@pytest.mark.parametrize("lam", [0.1, 0.5, 0.9])
def test_transient_precision_is_linear_in_lambda(model, lam):
    transient = edh_flow.transient_params(model, lam)
    expected = model.get_prior_prec() + lam * model.get_obs_matrix().T @ model.get_obs_prec() @ model.get_obs_matrix()
    assert np.allclose(np.linalg.inv(transient.get_cov()), expected)


@pytest.mark.parametrize("lam", [-0.5, 1.5])
def test_lambda_out_of_range(model, lam):
    with pytest.raises(ValueError):
        edh_flow.edh_coeffs(model, lam)


@pytest.mark.parametrize("lam", [0.25, 0.5, 0.75])
def test_liouville_residual_vanishes(model, lam):
    transient = edh_flow.transient_params(model, lam)
    spread = 3.0 * np.sqrt(np.diag(transient.get_cov()))
    axes = [np.linspace(m - s, m + s, 20) for m, s in zip(transient.get_mean(), spread)]
    points = np.stack([axis.reshape(-1) for axis in np.meshgrid(*axes, indexing="ij")], axis=1)
    density = np.exp(gaussian_core.gaussian_logpdf(points, transient.get_gaussian()))
    residual = edh_flow.liouville_residual(model, lam, points)
    assert np.max(np.abs(residual)) < 1e-6 * np.max(density)


def test_edh_particles_follow_the_transient_density(model):
    rule = quadrature.gh_rule_nd(2, 2)
    prior = model.get_prior()
    particles = quadrature.transport(rule, prior.get_mean(), prior.get_chol())
    horizon = 3.0
    final = edh_flow.integrate_edh_particles(model, particles.get_positions(), horizon,
                                             integrator.OdeConfig("rk4", step=1e-3))
    transient = edh_flow.transient_params(model, edh_flow.lambda_schedule(horizon))
    weights = particles.get_weights()
    mean = weights @ final
    cov = np.einsum("m,mi,mj->ij", weights, final - mean, final - mean)
    assert np.allclose(mean, transient.get_mean(), atol=1e-6)
    assert np.allclose(cov, transient.get_cov(), atol=1e-6)
