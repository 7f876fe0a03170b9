import numpy as np
import pytest

from fisherflow import errors
from fisherflow import experiments
from fisherflow import gaussian_core
from fisherflow import metrics
from fisherflow import quadrature
from fisherflow import targets


@pytest.fixture
def model():
    return experiments.linear_model()


def _gaussian_logpdf(g: gaussian_core.GaussianParams):
    return lambda x: gaussian_core.gaussian_logpdf(x, g)


def test_grid_points_and_volume():
    grid = metrics.EvalGrid([(0.0, 1.0), (0.0, 2.0)], [2, 4])
    assert grid.get_size() == 8
    assert grid.get_cell_volume() == pytest.approx(0.25)
    assert np.allclose(grid.get_points()[0], [0.25, 0.25])
    assert np.allclose(grid.get_points()[1], [0.25, 0.75])
    assert np.allclose(grid.get_points()[-1], [0.75, 1.75])


@pytest.mark.parametrize("bounds,resolution", [
    ([(1.0, 0.0)], [3]),
    ([(0.0, 1.0)], [0]),
])
def test_grid_rejects_bad_settings(bounds, resolution):
    with pytest.raises(ValueError):
        metrics.EvalGrid(bounds, resolution)


def test_grid_dimension_mismatch():
    with pytest.raises(errors.DimensionMismatch):
        metrics.EvalGrid([(0.0, 1.0)], [2, 2])


def test_grid_around_a_gaussian():
    g = gaussian_core.GaussianParams(np.array([1.0, -1.0]), np.diag([4.0, 1.0]))
    grid = metrics.EvalGrid.around(g, 10, width=3.0)
    assert grid.get_bounds() == ((-5.0, 7.0), (-4.0, 2.0))
    assert grid.get_resolution() == (10, 10)


def test_evaluate_is_chunked_in_order():
    points = np.random.default_rng(0).normal(size=(metrics.CHUNK_SIZE + 10, 2))
    assert np.array_equal(metrics.evaluate(lambda x: x[:, 0], points), points[:, 0])


def test_evaluate_rejects_non_finite_values():
    with pytest.raises(errors.NonFiniteValue):
        metrics.evaluate(lambda x: np.full(x.shape[0], -np.inf), np.zeros((3, 2)))


def test_importance_kl_matches_the_closed_form(model):
    posterior = targets.kalman_posterior(model)
    q = gaussian_core.GaussianParams(posterior.get_mean() + np.array([0.1, -0.05]), 1.2 * posterior.get_cov())
    grid = metrics.EvalGrid.around(posterior, 400, width=10.0)
    estimate = metrics.importance_kl_estimate(_gaussian_logpdf(q), model.log_joint, grid)
    assert estimate == pytest.approx(gaussian_core.gaussian_kl(q, posterior), abs=1e-3)


def test_importance_kl_vanishes_at_the_posterior(model):
    posterior = targets.kalman_posterior(model)
    grid = metrics.EvalGrid.around(posterior, 300, width=10.0)
    assert metrics.importance_kl_estimate(_gaussian_logpdf(posterior), model.log_joint, grid) == pytest.approx(
        0.0, abs=1e-6)


def test_paper_kl_formula(model):
    posterior = targets.kalman_posterior(model)
    points = metrics.EvalGrid.around(posterior, 50).get_points()
    log_p = model.log_joint(points)
    expected = -model.log_evidence() + np.log(np.sum(np.exp(log_p))) / points.shape[0]
    assert metrics.paper_kl_estimate(_gaussian_logpdf(posterior), model.log_joint, points) == pytest.approx(expected)


def test_elbo_is_the_evidence_at_the_posterior(model):
    posterior = targets.kalman_posterior(model)
    particles = quadrature.transport(quadrature.gh_rule_nd(3, 2), posterior.get_mean(), posterior.get_chol())
    assert metrics.elbo_estimate(particles, _gaussian_logpdf(posterior), model.log_joint) == pytest.approx(
        model.log_evidence())


def test_elbo_gap_is_the_kl(model):
    posterior = targets.kalman_posterior(model)
    q = gaussian_core.GaussianParams(np.array([0.0, 3.0]), np.array([[0.5, 0.1], [0.1, 0.4]]))
    particles = quadrature.transport(quadrature.gh_rule_nd(3, 2), q.get_mean(), q.get_chol())
    elbo = metrics.elbo_estimate(particles, _gaussian_logpdf(q), model.log_joint)
    assert elbo == pytest.approx(model.log_evidence() - gaussian_core.gaussian_kl(q, posterior))


def test_mode_coverage():
    reference = gaussian_core.MixtureParams([gaussian_core.GaussianParams(np.zeros(2), np.eye(2)),
                                             gaussian_core.GaussianParams(np.array([10.0, 0.0]), np.eye(2))])
    approx = gaussian_core.MixtureParams([gaussian_core.GaussianParams(np.array([0.5, 0.0]), np.eye(2)),
                                          gaussian_core.GaussianParams(np.array([5.0, 5.0]), np.eye(2))])
    assert metrics.mode_coverage(approx, reference, 2.0).tolist() == [True, False]
    assert metrics.mode_coverage(approx, reference, 7.5).tolist() == [True, True]
    with pytest.raises(errors.DimensionMismatch):
        metrics.mode_coverage(approx, gaussian_core.MixtureParams([gaussian_core.GaussianParams(np.zeros(3),
                                                                                                np.eye(3))]), 2.0)


def test_moving_average_keeps_full_windows():
    times = np.arange(8) * 0.5
    values = np.array([0.0, 1.0, 2.0, 3.0, 10.0, 5.0, 6.0, 7.0])
    centres, averaged = metrics.moving_average(times, values)
    assert np.allclose(centres, times[2:6])
    assert np.allclose(averaged, [3.2, 4.2, 5.2, 6.2])


def test_moving_average_of_a_short_series_is_empty():
    centres, averaged = metrics.moving_average([0.0, 1.0], [1.0, 2.0])
    assert centres.size == 0
    assert averaged.size == 0
    with pytest.raises(ValueError):
        metrics.moving_average([0.0, 1.0], [1.0, 2.0], window=4)
    with pytest.raises(errors.DimensionMismatch):
        metrics.moving_average([0.0, 1.0, 2.0], [1.0, 2.0])


def test_relative_gap():
    assert metrics.relative_gap(-200.0, -201.0) == pytest.approx(0.005)
    with pytest.raises(ValueError):
        metrics.relative_gap(0.0, 1.0)
