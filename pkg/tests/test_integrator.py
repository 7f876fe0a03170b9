import numpy as np
import pytest

from fisherflow import errors
from fisherflow import integrator


def _decay(t, y):
    return -y


@pytest.mark.parametrize("method,tolerance", [("rk4", 1e-9), ("rk45", 1e-6)])
def test_exponential_decay(method, tolerance):
    config = integrator.OdeConfig(method, step=0.01, rel_tol=1e-9, abs_tol=1e-12)
    final, checkpoints = integrator.integrate(_decay, np.array([1.0, 2.0]), 0.0, 1.0, config)
    assert np.allclose(final, np.exp(-1.0) * np.array([1.0, 2.0]), atol=tolerance)
    assert checkpoints[0].get_t() == 0.0
    assert checkpoints[-1].get_t() == pytest.approx(1.0)


def test_time_dependent_rhs():
    config = integrator.OdeConfig("rk4", step=0.01)
    final, _ = integrator.integrate(lambda t, y: np.array([np.cos(t)]), np.zeros(1), 0.0, 2.0, config)
    assert final[0] == pytest.approx(np.sin(2.0), abs=1e-10)


@pytest.mark.parametrize("method", ["rk4", "rk45"])
def test_checkpoint_spacing(method):
    config = integrator.OdeConfig(method, step=0.1, checkpoint_every=0.5)
    _, checkpoints = integrator.integrate(_decay, np.ones(1), 0.0, 2.0, config)
    assert [c.get_t() for c in checkpoints] == pytest.approx([0.0, 0.5, 1.0, 1.5, 2.0])


def test_zero_horizon():
    final, checkpoints = integrator.integrate(_decay, np.ones(2), 1.0, 1.0, integrator.OdeConfig())
    assert np.array_equal(final, np.ones(2))
    assert checkpoints == []


def test_hook_veto_reports_time():
    config = integrator.OdeConfig("rk4", step=0.25)
    with pytest.raises(errors.DivergedFlow) as info:
        integrator.integrate(_decay, np.ones(1), 0.0, 1.0, config, hooks=[lambda t, y: t < 0.6])
    assert info.value.t == pytest.approx(0.75)


def test_non_finite_rhs_diverges():
    config = integrator.OdeConfig("rk4", step=0.1)
    with pytest.raises(errors.DivergedFlow):
        integrator.integrate(lambda t, y: y / 0.0 if t > 0.3 else y, np.ones(1), 0.0, 1.0, config)


@pytest.mark.parametrize("method", ["rk4", "rk45"])
def test_step_budget(method):
    config = integrator.OdeConfig(method, step=1e-3, max_steps=3)
    with pytest.raises(errors.MaxStepsExceeded):
        integrator.integrate(_decay, np.ones(1), 0.0, 1.0, config)


@pytest.mark.parametrize("kwargs", [{"step": 0.0}, {"rel_tol": -1.0}, {"max_steps": 0},
                                    {"checkpoint_every": 0.0}, {"method": "euler"}])
def test_invalid_settings(kwargs):
    with pytest.raises(ValueError):
        integrator.OdeConfig(**kwargs)


def test_state_layout():
    layout = integrator.StateLayout([("mean", (2,)), ("cov", (2, 2))])
    parts = {"mean": np.array([1.0, 2.0]), "cov": np.eye(2)}
    state = integrator.CompositeState.from_parts(layout, parts)
    assert layout.get_size() == 6
    assert layout.get_names() == ["mean", "cov"]
    assert np.array_equal(state.unpack()["cov"], np.eye(2))
    with pytest.raises(errors.DimensionMismatch):
        layout.pack({"mean": np.zeros(3), "cov": np.eye(2)})
    with pytest.raises(ValueError):
        integrator.StateLayout([("a", (1,)), ("a", (2,))])


def test_rk45_retries_a_step_whose_stage_fails():
    calls = {"failures": 0}

    def rhs(t, y):
        if t > 0.0 and calls["failures"] < 2:
            calls["failures"] += 1
            raise errors.NotPositiveDefinite("Stage left the domain.")
        return -y

    config = integrator.OdeConfig("rk45", step=0.5, rel_tol=1e-9, abs_tol=1e-12)
    final, _ = integrator.integrate(rhs, np.ones(1), 0.0, 1.0, config)
    assert calls["failures"] == 2
    assert final[0] == pytest.approx(np.exp(-1.0), abs=1e-6)


def test_rk45_step_underflow_diverges():
    config = integrator.OdeConfig("rk45", step=0.1)
    with pytest.raises(errors.DivergedFlow):
        integrator.integrate(lambda t, y: y / 0.0 if t > 0.3 else y, np.ones(1), 0.0, 1.0, config)
