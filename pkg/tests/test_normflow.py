import numpy as np
import pytest

from fisherflow import errors
from fisherflow import experiments
from fisherflow import fr_gaussian
from fisherflow import integrator
from fisherflow import normflow
from fisherflow import quadrature
from fisherflow import targets

STEP: float = 1e-6


def _planar() -> normflow.PlanarTransform:
    rng = np.random.default_rng(0)
    return normflow.PlanarTransform(rng.normal(size=3), rng.normal(size=3), 0.3)


def _radial() -> normflow.RadialTransform:
    return normflow.RadialTransform(np.array([0.2, -0.4, 0.1]), 0.8, 0.5)


def _triangular() -> normflow.TriangularTransform:
    rng = np.random.default_rng(1)
    return normflow.TriangularTransform(0.5 * np.tril(rng.normal(size=(3, 3)), -1),
                                        0.3 * np.tril(rng.normal(size=(3, 3)), -1),
                                        rng.normal(size=3), 0.2 * rng.normal(size=3))


TRANSFORMS = {"planar": _planar, "radial": _radial, "triangular": _triangular}


def _points() -> np.ndarray:
    return np.random.default_rng(2).normal(size=(4, 3))


def _along(function, base: np.ndarray, direction: np.ndarray) -> np.ndarray:
    return (function(base + STEP * direction) - function(base - STEP * direction)) / (2.0 * STEP)


def _mixed_chain() -> normflow.TransformChain:
    return normflow.TransformChain([_planar(), _radial(), _triangular()], 3)


@pytest.mark.parametrize("name", sorted(TRANSFORMS))
def test_jacobian_and_logdet(name):
    transform = TRANSFORMS[name]()
    u = _points()
    jacobian = transform.jacobian(u)
    for i in range(3):
        direction = np.eye(3)[i]
        numeric = _along(lambda v: transform.forward(v)[0], u, direction)
        assert np.allclose(jacobian[:, :, i], numeric, atol=1e-6)
    _, logdet = transform.forward(u)
    assert np.allclose(logdet, np.log(np.abs(np.linalg.det(jacobian))))


@pytest.mark.parametrize("name", sorted(TRANSFORMS))
def test_vector_products(name):
    transform = TRANSFORMS[name]()
    u = _points()
    a = np.random.default_rng(3).normal(size=u.shape)
    jacobian = transform.jacobian(u)
    assert np.allclose(transform.vjp_x(u, a), np.einsum("mij,mi->mj", jacobian, a))

    theta = transform.get_params()
    d_theta = np.random.default_rng(4).normal(size=theta.shape[0])
    numeric = _along(lambda p: transform.with_params(p).forward(u)[0], theta, d_theta)
    tangent = transform.jvp_params(u, d_theta)
    assert np.allclose(tangent, numeric, atol=1e-6)
    assert np.allclose(transform.vjp_params(u, a) @ d_theta, np.sum(a * tangent, axis=1))


@pytest.mark.parametrize("name", sorted(TRANSFORMS))
def test_logdet_gradients(name):
    transform = TRANSFORMS[name]()
    u = _points()
    grad_x = transform.grad_logdet_x(u)
    for i in range(3):
        numeric = _along(lambda v: transform.forward(v)[1], u, np.eye(3)[i])
        assert np.allclose(grad_x[:, i], numeric, atol=1e-6)
    theta = transform.get_params()
    d_theta = np.random.default_rng(5).normal(size=theta.shape[0])
    numeric = _along(lambda p: transform.with_params(p).forward(u)[1], theta, d_theta)
    assert np.allclose(transform.grad_logdet_params(u) @ d_theta, numeric, atol=1e-6)


@pytest.mark.parametrize("kind", ["planar", "radial", "triangular"])
def test_built_chains_start_at_the_identity(kind):
    chain = normflow.TransformChain.build(kind, 2, 3)
    u = _points()
    x, logdet = chain.forward(u)
    assert np.allclose(x, u)
    assert np.allclose(logdet, 0.0)


def test_planar_identity_with_random_normal():
    chain = normflow.TransformChain.build("planar", 1, 3, np.random.default_rng(6))
    x, logdet = chain.forward(_points())
    assert np.allclose(x, _points())
    assert np.allclose(logdet, 0.0)


def test_planar_direction_keeps_the_map_invertible():
    transform = normflow.PlanarTransform(np.array([-5.0, 0.0]), np.array([1.0, 0.0]), 0.0)
    assert transform.get_direction() @ np.array([1.0, 0.0]) > -1.0
    assert transform.is_invertible()


def test_radial_rejects_bad_parameters():
    with pytest.raises(ValueError):
        normflow.RadialTransform(np.zeros(2), 0.0, 1.0)
    with pytest.raises(ValueError):
        normflow.RadialTransform(np.zeros(2), 1.0, -1.5)


def test_triangular_inverse():
    transform = _triangular()
    u = _points()
    x, _ = transform.forward(u)
    assert np.allclose(transform.inverse(x), u)
    assert np.allclose(transform.inverse(x[0]), u[0])
    with pytest.raises(ValueError):
        normflow.TriangularTransform(np.ones((3, 3)), np.zeros((3, 3)), np.zeros(3), np.zeros(3))


def test_chain_round_trips_through_json():
    chain = _mixed_chain()
    rebuilt = normflow.TransformChain.from_json(chain.to_json(), 3)
    assert np.allclose(rebuilt.forward(_points())[0], chain.forward(_points())[0])
    assert np.allclose(rebuilt.get_params(), chain.get_params())
    with pytest.raises(ValueError):
        normflow.TransformChain.from_json([{"type": "spline", "params": {}}], 3)
    with pytest.raises(ValueError):
        normflow.TransformChain.build("spline", 1, 3)


def test_chain_dimension_checks():
    with pytest.raises(errors.DimensionMismatch):
        normflow.TransformChain([_planar()], 2)
    with pytest.raises(errors.DimensionMismatch):
        _mixed_chain().with_params(np.zeros(3))


def test_chain_parameter_tangent():
    chain = _mixed_chain()
    u = _points()
    theta = chain.get_params()
    d_theta = np.random.default_rng(7).normal(size=theta.shape[0])
    numeric = _along(lambda p: chain.with_params(p).forward(u)[0], theta, d_theta)
    assert np.allclose(chain.jvp_params(u, d_theta), numeric, atol=1e-6)
    jacobian = chain.jacobian(u)
    assert np.allclose(chain.forward(u)[1], np.log(np.abs(np.linalg.det(jacobian))))


def test_log_joint_gradients():
    chain = _mixed_chain()
    model = targets.FunnelModel(3)
    u = _points() * 0.5
    value, grad_u, grad_theta = chain.log_joint_grads(u, model)
    assert np.allclose(value, normflow.transformed_log_joint(u, chain, model))
    for i in range(3):
        numeric = _along(lambda v: normflow.transformed_log_joint(v, chain, model), u, np.eye(3)[i])
        assert np.allclose(grad_u[:, i], numeric, rtol=1e-5, atol=1e-5)
    theta = chain.get_params()
    d_theta = np.random.default_rng(8).normal(size=theta.shape[0])
    numeric = _along(lambda p: normflow.transformed_log_joint(u, chain.with_params(p), model), theta, d_theta)
    assert np.allclose(grad_theta @ d_theta, numeric, rtol=1e-5, atol=1e-5)


def test_forward_checks_finiteness():
    chain = _mixed_chain()
    x, logdet = normflow.forward(chain, np.zeros(3))
    assert x.shape == (3,)
    assert isinstance(logdet, float)
    with pytest.raises(errors.NonFiniteValue):
        normflow.forward(chain, np.array([np.nan, 0.0, 0.0]))


def test_transformed_target_keeps_the_evidence():
    model = experiments.linear_model()
    rng = np.random.default_rng(9)
    chain = normflow.TransformChain([
        normflow.PlanarTransform(0.5 * rng.normal(size=2), rng.normal(size=2), 0.1),
        normflow.TriangularTransform(np.array([[0.0, 0.0], [0.3, 0.0]]), np.array([[0.0, 0.0], [0.1, 0.0]]),
                                     np.array([0.2, -0.1]), np.array([0.1, -0.2]))], 2)
    axis = np.linspace(-10.0, 10.0, 601)
    grid = np.stack([g.reshape(-1) for g in np.meshgrid(axis, axis, indexing="ij")], axis=1)
    mass = np.sum(np.exp(normflow.transformed_log_joint(grid, chain, model))) * (axis[1] - axis[0]) ** 2
    assert mass == pytest.approx(np.exp(model.log_evidence()), rel=1e-3)


def test_joint_state_arguments():
    model = experiments.range_model()
    rule = quadrature.gh_rule_nd(4, 2)
    chain = normflow.TransformChain.build("triangular", 1, 2)
    analytic = fr_gaussian.GaussianFlowState.initial(model.get_prior(), rule, fr_gaussian.ExpectationMode.ANALYTIC)
    with pytest.raises(ValueError):
        normflow.JointFlowState(analytic, chain)
    stein = fr_gaussian.GaussianFlowState.initial(model.get_prior(), rule)
    with pytest.raises(ValueError):
        normflow.JointFlowState(stein, chain, gamma=-1.0)
    with pytest.raises(errors.DimensionMismatch):
        normflow.JointFlowState(stein, normflow.TransformChain.build("triangular", 1, 3))


def test_frozen_identity_transform_reduces_to_the_base_flow():
    model = experiments.range_model()
    rule = quadrature.gh_rule_nd(4, 2)
    ode = integrator.OdeConfig("rk4", step=2e-2)
    base = fr_gaussian.GaussianFlowState.initial(model.get_prior(), rule)
    chain = normflow.TransformChain.build("triangular", 1, 2)
    particles, state = normflow.integrate_nf(normflow.JointFlowState(base, chain, gamma=0.0), model, 1.0, ode)
    plain = fr_gaussian.integrate_gaussian_flow(base, model, 1.0, ode)
    assert np.allclose(state.get_base().get_mean(), plain.get_mean(), atol=1e-10)
    assert np.allclose(state.get_base().get_prec(), plain.get_prec(), atol=1e-10)
    assert np.allclose(particles.get_positions(), plain.get_particles().get_positions(), atol=1e-10)
    assert np.array_equal(state.get_chain().get_params(), chain.get_params())


def test_transformed_velocity_with_a_frozen_identity():
    model = experiments.range_model()
    rule = quadrature.gh_rule_nd(4, 2)
    base = fr_gaussian.GaussianFlowState.initial(model.get_prior(), rule)
    state = normflow.JointFlowState(base, normflow.TransformChain.build("triangular", 1, 2), gamma=0.0)
    u = base.get_particles().get_positions()
    coeffs = fr_gaussian.dynamics_coeffs(base, model)
    assert np.allclose(normflow.transformed_velocity(state, model, u), u @ coeffs.A.T + coeffs.b)


@pytest.mark.parametrize("kind", ["planar", "triangular"])
def test_joint_flow_lowers_the_particle_kl(kind):
    model = experiments.range_model()
    rule = quadrature.gh_rule_nd(4, 2)
    base = fr_gaussian.GaussianFlowState.initial(model.get_prior(), rule)
    init = normflow.JointFlowState(base, normflow.TransformChain.build(kind, 1, 2, np.random.default_rng(10)))
    seen = []
    particles, final = normflow.integrate_nf(init, model, 2.0, integrator.OdeConfig("rk4", step=1e-2), seen.append)
    assert normflow.particle_kl(final, model) < normflow.particle_kl(init, model)
    assert particles.get_size() == 16
    assert np.all(np.isfinite(particles.get_positions()))
    assert seen[0].get_t() == 0.0
    assert seen[-1].get_t() == pytest.approx(2.0)
    assert "chain" in final.to_checkpoint()


def test_particle_kl_does_not_increase_with_five_planar_maps():
    model = experiments.range_model()
    rule = quadrature.gh_rule_nd(4, 2)
    base = fr_gaussian.GaussianFlowState.initial(model.get_prior(), rule)
    init = normflow.JointFlowState(base, normflow.TransformChain.build("planar", 5, 2, np.random.default_rng(11)))
    seen = []
    normflow.integrate_nf(init, model, 2.0, integrator.OdeConfig("rk4", step=1e-2, checkpoint_every=0.1), seen.append)
    kl = [normflow.particle_kl(state, model) for state in seen]
    assert len(kl) == 21
    assert all(later <= earlier + 1e-6 for earlier, later in zip(kl, kl[1:]))


def test_transformed_velocity_matches_the_particle_motion():
    model = experiments.range_model()
    rule = quadrature.gh_rule_nd(4, 2)
    rng = np.random.default_rng(12)
    chain = normflow.TransformChain([
        normflow.PlanarTransform(0.5 * rng.normal(size=2), rng.normal(size=2), 0.1),
        normflow.TriangularTransform(np.array([[0.0, 0.0], [0.3, 0.0]]), np.array([[0.0, 0.0], [0.1, 0.0]]),
                                     np.array([0.2, -0.1]), np.array([0.1, -0.2]))], 2)
    init = normflow.JointFlowState(fr_gaussian.GaussianFlowState.initial(model.get_prior(), rule), chain)
    u = init.propagated_particles().get_positions()
    velocity = normflow.transformed_velocity(init, model, u)
    dt = 1e-6
    moved, _ = normflow.integrate_nf(init, model, dt, integrator.OdeConfig("rk4", step=dt))
    start, _ = chain.forward(u)
    difference = (moved.get_positions() - start) / dt
    assert np.linalg.norm(difference - velocity) < 1e-3 * np.linalg.norm(velocity)
