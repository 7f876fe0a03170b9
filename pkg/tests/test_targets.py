import numpy as np
import pytest

from fisherflow import errors
from fisherflow import experiments
from fisherflow import gaussian_core
from fisherflow import targets


def _logreg_model():
    return targets.generate_logreg_dataset(3, 40, seed=2)


MODELS = {
    "linear": experiments.linear_model,
    "mixture-prior": experiments.gmm_prior_model,
    "range": experiments.range_model,
    "logreg": _logreg_model,
    "funnel": lambda: targets.FunnelModel(4),
}


def _finite_difference(function, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    columns = []
    for i in range(x.shape[0]):
        offset = np.zeros_like(x)
        offset[i] = step
        columns.append((np.asarray(function(x + offset)) - np.asarray(function(x - offset))) / (2 * step))
    return np.stack(columns, axis=-1)


@pytest.mark.parametrize("name", sorted(MODELS))
def test_gradient_and_hessian_match_finite_differences(name):
    model = MODELS[name]()
    x = np.random.default_rng(4).normal(size=model.get_dim()) * 0.5 + 0.3
    assert np.allclose(_finite_difference(model.log_joint, x), model.grad_log_joint(x), rtol=1e-5, atol=1e-5)
    assert np.allclose(_finite_difference(model.grad_log_joint, x), model.hess_log_joint(x), rtol=1e-5, atol=1e-5)


@pytest.mark.parametrize("name", sorted(MODELS))
def test_batch_shapes(name):
    model = MODELS[name]()
    batch = np.random.default_rng(5).normal(size=(6, model.get_dim())) + 0.5
    assert model.log_joint(batch).shape == (6,)
    assert model.grad_log_joint(batch).shape == (6, model.get_dim())
    assert model.hess_log_joint(batch).shape == (6, model.get_dim(), model.get_dim())
    assert isinstance(model.log_joint(batch[0]), float)


@pytest.mark.parametrize("name", sorted(MODELS))
def test_weighted_hessian_sums_the_batch(name):
    model = MODELS[name]()
    rng = np.random.default_rng(7)
    batch = rng.normal(size=(6, model.get_dim())) + 0.5
    weights = rng.random(6)
    expected = np.tensordot(weights, model.hess_log_joint(batch), axes=1)
    assert np.allclose(model.weighted_hess_log_joint(batch, weights), expected, atol=1e-10)
    with pytest.raises(errors.DimensionMismatch):
        model.weighted_hess_log_joint(batch, weights[:5])


def test_kalman_posterior_and_evidence():
    model = experiments.linear_model()
    posterior = targets.kalman_posterior(model)
    points = np.random.default_rng(6).normal(size=(5, 2)) * 2.0
    gaps = model.log_joint(points) - gaussian_core.gaussian_logpdf(points, posterior)
    assert np.allclose(gaps, model.log_evidence())
    prec = np.linalg.inv(model.get_prior().get_cov()) + (model.get_obs_matrix().T @ model.get_obs_prec()
                                                         @ model.get_obs_matrix())
    assert np.allclose(np.linalg.inv(posterior.get_cov()), prec)


def test_mixture_posterior_and_evidence():
    model = experiments.gmm_prior_model()
    posterior = targets.gmm_posterior_analytic(model)
    assert posterior.get_num_components() == 4
    assert np.sum(posterior.get_weights()) == pytest.approx(1.0)
    points = np.random.default_rng(7).normal(size=(5, 2)) * 4.0
    gaps = model.log_joint(points) - gaussian_core.mixture_logpdf(points, posterior)
    assert np.allclose(gaps, model.log_evidence())


def test_range_model_is_singular_at_the_origin():
    model = experiments.range_model()
    assert np.isfinite(model.log_joint(np.zeros(2)))
    with pytest.raises(errors.SingularPoint):
        model.grad_log_joint(np.zeros(2))


def test_linear_model_dimension_check():
    with pytest.raises(errors.DimensionMismatch):
        targets.LinearGaussianModel(np.zeros(2), np.eye(2), np.eye(3), np.eye(2), np.zeros(2))


def test_logreg_dataset_is_seeded_and_round_trips(tmp_path):
    first = targets.generate_logreg_dataset(5, 30, seed=11)
    second = targets.generate_logreg_dataset(5, 30, seed=11)
    assert np.array_equal(first.get_features(), second.get_features())
    assert set(np.unique(first.get_labels())) <= {0.0, 1.0}
    path = tmp_path / "dataset.csv"
    first.to_csv(path)
    assert path.read_text().splitlines()[0] == "y_1,y_2,y_3,y_4,y_5,z"
    loaded = targets.LogisticRegressionModel.from_csv(path)
    assert np.array_equal(loaded.get_features(), first.get_features())
    x = np.full(5, 0.1)
    assert loaded.log_joint(x) == first.log_joint(x)


def test_logreg_rejects_non_binary_labels():
    with pytest.raises(ValueError):
        targets.LogisticRegressionModel(np.eye(2), np.array([0.0, 0.5]))


def test_funnel_is_finite_for_wide_necks():
    model = targets.FunnelModel(30)
    x = np.zeros(30)
    x[0] = 700.0
    assert np.isfinite(model.log_joint(x))
    assert np.all(np.isfinite(model.grad_log_joint(x)))


def test_funnel_samples():
    model = targets.FunnelModel(10)
    draws = model.sample(20000, np.random.default_rng(8))
    assert draws.shape == (20000, 10)
    assert np.std(draws[:, 0]) == pytest.approx(3.0, rel=0.05)
    correlation = np.corrcoef(draws[:, 0], np.log(np.linalg.norm(draws[:, 1:], axis=1)))[0, 1]
    assert correlation > 0.9
