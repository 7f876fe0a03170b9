import numpy as np
import pytest
import scipy.stats

from fisherflow import errors
from fisherflow import gaussian_core

COV: np.ndarray = np.array([[1.5, 0.5], [0.5, 5.5]])
MEAN: np.ndarray = np.array([0.3, -1.2])


def test_gaussian_params_are_read_only():
    g = gaussian_core.GaussianParams(MEAN, COV)
    with pytest.raises(ValueError):
        g.get_mean()[0] = 1.0
    assert np.allclose(g.get_chol() @ g.get_chol().T, COV)


@pytest.mark.parametrize("cov", [
    np.array([[1.0, 0.2], [0.0, 1.0]]),
    np.array([[1.0, 0.0], [0.0, -1.0]]),
    np.array([[1.0, 2.0], [2.0, 1.0]]),
])
def test_invalid_covariances_are_rejected(cov):
    with pytest.raises(errors.NotPositiveDefinite):
        gaussian_core.GaussianParams(np.zeros(2), cov)


def test_dimension_mismatch():
    with pytest.raises(errors.DimensionMismatch):
        gaussian_core.GaussianParams(np.zeros(3), COV)


def test_non_finite_mean():
    with pytest.raises(errors.NonFiniteValue):
        gaussian_core.GaussianParams(np.array([np.nan, 0.0]), COV)


def test_parameterisations_agree():
    g = gaussian_core.GaussianParams(MEAN, COV)
    assert np.allclose(g.to_precision().to_gaussian().get_cov(), COV)
    assert np.allclose(g.to_sqrt().to_gaussian().get_cov(), COV)
    natural = g.to_natural()
    assert np.allclose(natural.get_big_gamma(), -0.5 * np.linalg.inv(COV))
    assert np.allclose(natural.to_gaussian().get_mean(), MEAN)


def test_sqrt_params_accept_general_square_roots():
    rotation = np.array([[0.0, -1.0], [1.0, 0.0]])
    sqrt = np.linalg.cholesky(COV) @ rotation
    assert np.allclose(gaussian_core.SqrtParams(MEAN, sqrt).to_gaussian().get_cov(), COV)
    with pytest.raises(errors.NotPositiveDefinite):
        gaussian_core.SqrtParams(MEAN, np.zeros((2, 2)))


def test_logpdf_matches_scipy():
    g = gaussian_core.GaussianParams(MEAN, COV)
    points = np.random.default_rng(0).normal(size=(5, 2))
    expected = scipy.stats.multivariate_normal(MEAN, COV).logpdf(points)
    assert np.allclose(gaussian_core.gaussian_logpdf(points, g), expected)
    assert isinstance(gaussian_core.gaussian_logpdf(points[0], g), float)
    prec_chol = np.linalg.cholesky(np.linalg.inv(COV))
    assert np.allclose(gaussian_core.precision_logpdf(points, MEAN, prec_chol), expected)


def test_gaussian_kl():
    q = gaussian_core.GaussianParams(np.zeros(2), np.eye(2))
    p = gaussian_core.GaussianParams(np.zeros(2), 2.0 * np.eye(2))
    assert gaussian_core.gaussian_kl(q, q) == 0.0
    assert gaussian_core.gaussian_kl(q, p) == pytest.approx(np.log(2.0) - 0.5)
    shifted = gaussian_core.GaussianParams(np.array([1.0, 0.0]), np.eye(2))
    assert gaussian_core.gaussian_kl(shifted, q) == pytest.approx(0.5)


def test_mahalanobis():
    prec = np.linalg.inv(COV)
    x = np.array([1.0, 2.0])
    expected = (x - MEAN) @ prec @ (x - MEAN)
    assert gaussian_core.mahalanobis(x, MEAN, prec) == pytest.approx(expected)
    assert gaussian_core.mahalanobis(np.stack([x, MEAN]), MEAN, prec)[1] == 0.0


def test_mixture_log_odds():
    components = [gaussian_core.GaussianParams(np.full(2, float(k)), np.eye(2)) for k in range(3)]
    mixture = gaussian_core.MixtureParams.from_weights(components, np.array([1.0, 2.0, 1.0]))
    assert mixture.get_log_odds()[-1] == 0.0
    assert np.allclose(mixture.get_weights(), [0.25, 0.5, 0.25])
    assert np.allclose(np.exp(mixture.get_log_weights()), mixture.get_weights())
    with pytest.raises(ValueError):
        gaussian_core.MixtureParams(components, np.array([0.0, 0.0, 1.0]))
    with pytest.raises(ValueError):
        gaussian_core.MixtureParams([])


def test_single_component_mixture_matches_gaussian():
    g = gaussian_core.GaussianParams(MEAN, COV)
    points = np.random.default_rng(1).normal(size=(4, 2))
    mixture = gaussian_core.MixtureParams([g])
    assert np.allclose(gaussian_core.mixture_logpdf(points, mixture), gaussian_core.gaussian_logpdf(points, g))


def test_mixture_score_matches_finite_differences():
    components = [gaussian_core.GaussianParams(np.array([1.0, 0.0]), COV),
                  gaussian_core.GaussianParams(np.array([-1.0, 2.0]), np.eye(2))]
    mixture = gaussian_core.MixtureParams.from_weights(components, np.array([0.3, 0.7]))
    precs = np.stack([np.linalg.inv(c.get_cov()) for c in components])
    prec_chols = np.stack([np.linalg.cholesky(p) for p in precs])
    x = np.array([[0.2, 0.9]])
    log_q, grad, hess = gaussian_core.mixture_score(x, mixture.get_means(), precs, prec_chols,
                                                    mixture.get_log_weights())
    assert log_q[0] == pytest.approx(gaussian_core.mixture_logpdf(x[0], mixture))
    step = 1e-5
    for i in range(2):
        offset = np.zeros(2)
        offset[i] = step
        forward = gaussian_core.mixture_score(x + offset, mixture.get_means(), precs, prec_chols,
                                              mixture.get_log_weights())
        backward = gaussian_core.mixture_score(x - offset, mixture.get_means(), precs, prec_chols,
                                               mixture.get_log_weights())
        assert (forward[0][0] - backward[0][0]) / (2 * step) == pytest.approx(grad[0, i], abs=1e-6)
        assert np.allclose((forward[1][0] - backward[1][0]) / (2 * step), hess[0, i], atol=1e-5)


def test_sampling_moments():
    g = gaussian_core.GaussianParams(MEAN, COV)
    draws = g.sample(40000, np.random.default_rng(3))
    assert np.allclose(draws.mean(axis=0), MEAN, atol=0.05)
    assert np.allclose(np.cov(draws.T), COV, atol=0.15)
