"""
Approximated Gaussian-mixture Fisher-Rao parameter flow with per-component particle dynamics.

Each component follows the Gaussian flow with V built from the full mixture log density,
expectations taken under that component. Weights move through log-odds η_k = log(π_k / π_K):
    dη_k/dt = E_K[V] − E_k[V],   η_K ≡ 0.

Imports:
    numpy
    scipy.special
    errors: Exception hierarchy of the library.
    fr_gaussian: Gaussian flow moments and invariant checks.
    gaussian_core: Gaussian parameterisations and densities.
    integrator: ODE integration of flat states.
    quadrature: Rules, transport and expectations.
    targets: Target models.
    workers: Ordered thread-pool map.

Classes:
    MixtureFlowState

Functions:
    clamp_log_odds, mixture_moments, mixture_param_rhs, natural_rates, component_dynamics,
    integrate_mixture_flow
"""

import logging
from collections.abc import Callable

import numpy as np
import scipy.special

from fisherflow import errors
from fisherflow import fr_gaussian
from fisherflow import gaussian_core
from fisherflow import integrator
from fisherflow import quadrature
from fisherflow import targets
from fisherflow import workers

LOGGER = logging.getLogger(__name__)

WEIGHT_FLOOR: float = 1e-12
LOG_ODDS_BOUND: float = 27.6


def clamp_log_odds(log_odds: np.ndarray) -> np.ndarray:
    """
    Clamps log-odds inside [−27.6, 27.6] so that every recovered weight stays at or above 1e-12.

    The box alone allows weights near e^{−55}, so the bounds are tightened with K: the upper bound is
    −log(1e-12) − log K and the lower bound sits log(1e-12) + log K below the current maximum. For
    K ≥ 2 both lie inside the box, and the pinned last entry never moves.

    Args:
        log_odds (np.ndarray): Log-odds (K,), last entry 0.

    Returns:
        np.ndarray: Clamped copy.
    """
    count: int = log_odds.shape[0]
    upper: float = min(LOG_ODDS_BOUND, -np.log(WEIGHT_FLOOR) - np.log(count))
    clamped: np.ndarray = np.clip(np.asarray(log_odds, dtype=float), -LOG_ODDS_BOUND, upper)
    clamped[-1] = 0.0
    lower: float = float(np.max(clamped)) + np.log(count) + np.log(WEIGHT_FLOOR)
    clamped = np.maximum(clamped, lower)
    clamped[-1] = 0.0
    return clamped


class MixtureFlowState:
    """
    State of the mixture flow.

    Attributes:
        __t (float): Flow time.
        __means (np.ndarray): Component means (K, n).
        __precs (np.ndarray): Component precisions (K, n, n).
        __sqrts (np.ndarray): Component square roots (K, n, n), kept in step with the precisions.
        __log_odds (np.ndarray): Log-odds (K,), last entry 0.
        __particles (np.ndarray): Per-component propagated particles (K, M, n).
        __particle_weights (np.ndarray): Within-component particle weights (M,).
        __mode (fr_gaussian.ExpectationMode): Expectation mode.
        __rule (quadrature.QuadratureRule): Rule shared by all components.
    """
    def __init__(self, t: float, means: np.ndarray, precs: np.ndarray, sqrts: np.ndarray, log_odds: np.ndarray,
                 particles: np.ndarray, particle_weights: np.ndarray, mode: fr_gaussian.ExpectationMode,
                 rule: quadrature.QuadratureRule) -> None:
        self.__t: float = float(t)
        self.__means: np.ndarray = np.array(means, dtype=float)
        self.__precs: np.ndarray = gaussian_core.symmetrize(np.array(precs, dtype=float))
        self.__sqrts: np.ndarray = np.array(sqrts, dtype=float)
        self.__log_odds: np.ndarray = np.array(log_odds, dtype=float)
        self.__particles: np.ndarray = np.array(particles, dtype=float)
        self.__particle_weights: np.ndarray = np.array(particle_weights, dtype=float)
        count, n = self.__means.shape
        if (self.__precs.shape != (count, n, n) or self.__sqrts.shape != (count, n, n)
                or self.__log_odds.shape != (count,) or self.__particles.shape[::2] != (count, n)):
            raise errors.DimensionMismatch("Mixture state arrays disagree in shape.")
        if self.__log_odds[-1] != 0.0:
            raise ValueError(f"'{self.__log_odds[-1]}'. The last log-odd must be pinned to 0.")
        for array in (self.__means, self.__precs, self.__sqrts, self.__log_odds, self.__particles,
                      self.__particle_weights):
            array.setflags(write=False)
        self.__mode: fr_gaussian.ExpectationMode = fr_gaussian.ExpectationMode(mode)
        self.__rule: quadrature.QuadratureRule = rule

    @classmethod
    def initial(cls, mixture: gaussian_core.MixtureParams, rule: quadrature.QuadratureRule,
                mode: fr_gaussian.ExpectationMode = fr_gaussian.ExpectationMode.STEIN) -> "MixtureFlowState":
        """
        Builds the state at t = 0 with each component's particles the transported rule.

        Args:
            mixture (gaussian_core.MixtureParams): Initial mixture.
            rule (quadrature.QuadratureRule): Expectation rule.
            mode (fr_gaussian.ExpectationMode): Expectation mode. Defaults to Stein.

        Returns:
            MixtureFlowState: The initial state.
        """
        components: tuple[gaussian_core.GaussianParams, ...] = mixture.get_components()
        sqrts: np.ndarray = np.stack([component.get_chol() for component in components])
        particles: np.ndarray = np.stack([quadrature.transport(rule, c.get_mean(), c.get_chol()).get_positions()
                                          for c in components])
        precs: np.ndarray = np.stack([gaussian_core.spd_inverse(c.get_cov()) for c in components])
        return cls(0.0, mixture.get_means(), precs, sqrts, clamp_log_odds(mixture.get_log_odds()),
                   particles, rule.get_weights(), mode, rule)

    def get_t(self) -> float:
        return self.__t

    def get_means(self) -> np.ndarray:
        return self.__means

    def get_precs(self) -> np.ndarray:
        return self.__precs

    def get_sqrts(self) -> np.ndarray:
        return self.__sqrts

    def get_log_odds(self) -> np.ndarray:
        return self.__log_odds

    def get_weights(self) -> np.ndarray:
        return gaussian_core.weights_from_log_odds(self.__log_odds)

    def get_particles(self) -> np.ndarray:
        return self.__particles

    def get_particle_weights(self) -> np.ndarray:
        return self.__particle_weights

    def get_mode(self) -> fr_gaussian.ExpectationMode:
        return self.__mode

    def get_rule(self) -> quadrature.QuadratureRule:
        return self.__rule

    def get_num_components(self) -> int:
        return self.__means.shape[0]

    def get_dim(self) -> int:
        return self.__means.shape[1]

    def get_mixture(self) -> gaussian_core.MixtureParams:
        """
        Gets the variational mixture in mean-covariance form.
        """
        components: list[gaussian_core.GaussianParams] = [
            gaussian_core.GaussianParams(self.__means[k], gaussian_core.spd_inverse(self.__precs[k]))
            for k in range(self.get_num_components())]
        return gaussian_core.MixtureParams(components, self.__log_odds)

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        """
        Variational mixture log density at a batch of points.
        """
        prec_chols: np.ndarray = np.stack([gaussian_core.cholesky_factor(prec) for prec in self.__precs])
        log_weights: np.ndarray = self.__log_odds - scipy.special.logsumexp(self.__log_odds)
        terms: np.ndarray = gaussian_core.mixture_log_terms(np.atleast_2d(x), self.__means, prec_chols, log_weights)
        return scipy.special.logsumexp(terms, axis=0)

    def all_particles(self) -> quadrature.ParticleSet:
        """
        Propagated particles of every component, weighted by π_k w_i.
        """
        weights: np.ndarray = np.outer(self.get_weights(), self.__particle_weights).reshape(-1)
        return quadrature.ParticleSet(self.__particles.reshape(-1, self.get_dim()), weights)

    def recovered_particles(self, base_nodes: quadrature.QuadratureRule) -> quadrature.ParticleSet:
        """
        Particles L_k ξ_i + μ_k of every component, weighted by π_k w_i.
        """
        positions: np.ndarray = np.concatenate([base_nodes.get_nodes() @ self.__sqrts[k].T + self.__means[k]
                                                for k in range(self.get_num_components())])
        weights: np.ndarray = np.outer(self.get_weights(), base_nodes.get_weights()).reshape(-1)
        return quadrature.ParticleSet(positions, weights)

    def to_checkpoint(self) -> dict:
        """
        Gets the JSON checkpoint with one entry per component plus the log-odds.
        """
        components: list[dict] = [{"mean": self.__means[k].tolist(), "cov_inv": self.__precs[k].tolist(),
                                   "L": self.__sqrts[k].tolist(), "particles": self.__particles[k].tolist()}
                                  for k in range(self.get_num_components())]
        return {"t": self.__t, "components": components, "log_odds": self.__log_odds.tolist()}


def mixture_moments(mode: fr_gaussian.ExpectationMode, model: targets.TargetModel,
                    rule: quadrature.QuadratureRule, means: np.ndarray, precs: np.ndarray, sqrts: np.ndarray,
                    log_odds: np.ndarray, t: float = 0.0) -> list[fr_gaussian.VMoments]:
    """
    Per-component moments of V = log q_mix − log p under each component.

    Args:
        mode (fr_gaussian.ExpectationMode): Expectation mode.
        model (targets.TargetModel): The target.
        rule (quadrature.QuadratureRule): Shared rule.
        means, precs, sqrts (np.ndarray): Component arrays.
        log_odds (np.ndarray): Log-odds.
        t (float): Flow time, used in error reports.

    Returns:
        list[fr_gaussian.VMoments]: One entry per component.

    Raises:
        DivergedFlow: If a component precision is not positive definite.
    """
    count, n = means.shape
    prec_chols: list[np.ndarray] = []
    for k in range(count):
        try:
            prec_chols.append(gaussian_core.cholesky_factor(precs[k]))
        except errors.NotPositiveDefinite as error:
            raise errors.DivergedFlow("Precision lost positive definiteness", t, k) from error
    chol_stack: np.ndarray = np.stack(prec_chols)
    positions: np.ndarray = np.einsum("mj,kij->kmi", rule.get_nodes(), sqrts) + means[:, None, :]
    flat: np.ndarray = positions.reshape(-1, n)
    weights: np.ndarray = rule.get_weights()
    log_weights: np.ndarray = log_odds - scipy.special.logsumexp(log_odds)

    if mode.is_stein:
        terms: np.ndarray = gaussian_core.mixture_log_terms(flat, means, chol_stack, log_weights)
        v_values: np.ndarray = (scipy.special.logsumexp(terms, axis=0) - model.log_joint(flat)).reshape(count, -1)
        # Own component density at its own particles, up to the constant log π_k.
        own_terms: np.ndarray = terms.reshape(count, count, -1)
        return workers.ordered_map(
            lambda k: fr_gaussian.stein_moments(positions[k], weights, means[k], precs[k], v_values[k],
                                                own_terms[k, k], mode.clips_curvature),
            range(count))

    log_q, grad_q, hess_q = gaussian_core.mixture_score(flat, means, precs, chol_stack, log_weights)
    size: int = rule.get_size()
    v_values = (log_q - model.log_joint(flat)).reshape(count, size)
    grad_v: np.ndarray = (grad_q - model.grad_log_joint(flat)).reshape(count, size, n)
    hess_q = hess_q.reshape(count, size, n, n)
    return workers.ordered_map(
        lambda k: fr_gaussian.analytic_moments(
            weights, gaussian_core.spd_inverse(precs[k]), v_values[k], grad_v[k],
            np.tensordot(weights, hess_q[k], axes=1) - model.weighted_hess_log_joint(positions[k], weights)),
        range(count))


def _state_moments(state: MixtureFlowState, model: targets.TargetModel) -> list[fr_gaussian.VMoments]:
    fr_gaussian.check_mode(state.get_mode(), model)
    return mixture_moments(state.get_mode(), model, state.get_rule(), state.get_means(), state.get_precs(),
                           state.get_sqrts(), state.get_log_odds(), state.get_t())


def _log_odds_rate(moments: list[fr_gaussian.VMoments]) -> np.ndarray:
    expected: np.ndarray = np.array([m.expected_v for m in moments])
    return expected[-1] - expected


def mixture_param_rhs(state: MixtureFlowState,
                      model: targets.TargetModel) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """
    Conventional-parameter rates (dμ_k/dt, dΣ_k⁻¹/dt) and the log-odds rate dη/dt.

    Args:
        state (MixtureFlowState): Current state.
        model (targets.TargetModel): The target.

    Returns:
        tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]: Component rates and dη/dt (last entry 0).
    """
    moments: list[fr_gaussian.VMoments] = _state_moments(state, model)
    return [(-m.sigma_grad, m.expected_hess) for m in moments], _log_odds_rate(moments)


def natural_rates(state: MixtureFlowState, model: targets.TargetModel) -> list[tuple[np.ndarray, np.ndarray]]:
    """
    Natural-parameter rates dγ/dt = −(½E[∇²V]Γ⁻¹γ + E[∇V]) and dΓ/dt = −½E[∇²V] per component.
    """
    rates: list[tuple[np.ndarray, np.ndarray]] = []
    for k, m in enumerate(_state_moments(state, model)):
        prec: np.ndarray = state.get_precs()[k]
        gamma: np.ndarray = prec @ state.get_means()[k]
        inverse_big_gamma: np.ndarray = -2.0 * gaussian_core.spd_inverse(prec)
        rates.append((-(0.5 * m.expected_hess @ inverse_big_gamma @ gamma + m.expected_grad),
                      -0.5 * m.expected_hess))
    return rates


def component_dynamics(state: MixtureFlowState, model: targets.TargetModel, k: int,
                       form: str = "conventional") -> fr_gaussian.FlowCoeffs:
    """
    Particle dynamics coefficients of component k.

    The conventional form is Ã = −½Σ_kE_k[∇²V], b̃ = −Σ_kE_k[∇V] − Ãμ_k. The natural form is
    Ã = ¼Γ⁻¹E_k[∇²V], b̃ = ½Γ⁻¹E_k[∇V] + ½ÃΓ⁻¹γ; both give the same field.

    Args:
        state (MixtureFlowState): Current state.
        model (targets.TargetModel): The target.
        k (int): Component index.
        form (str): "conventional" or "natural".

    Returns:
        fr_gaussian.FlowCoeffs: The coefficients.
    """
    if not 0 <= k < state.get_num_components():
        raise IndexError(f"'{k}'. Component index out of range.")
    moments: fr_gaussian.VMoments = _state_moments(state, model)[k]
    mean: np.ndarray = state.get_means()[k]
    if form == "conventional":
        return moments.coeffs(mean)
    if form != "natural":
        raise ValueError(f"'{form}'. Form must be 'conventional' or 'natural'.")
    prec: np.ndarray = state.get_precs()[k]
    inverse_big_gamma: np.ndarray = -2.0 * gaussian_core.spd_inverse(prec)
    A: np.ndarray = 0.25 * inverse_big_gamma @ moments.expected_hess
    b: np.ndarray = 0.5 * inverse_big_gamma @ moments.expected_grad + 0.5 * A @ inverse_big_gamma @ (prec @ mean)
    return fr_gaussian.FlowCoeffs(A, b)


def _layout(count: int, n: int, size: int) -> integrator.StateLayout:
    return integrator.StateLayout([("means", (count, n)), ("precs", (count, n, n)), ("sqrts", (count, n, n)),
                                   ("log_odds", (count,)), ("particles", (count, size, n))])


def state_vector(state: MixtureFlowState) -> tuple[integrator.StateLayout, np.ndarray]:
    """
    Packs a state into a flat vector.
    """
    layout: integrator.StateLayout = _layout(state.get_num_components(), state.get_dim(),
                                             state.get_particles().shape[1])
    return layout, layout.pack({"means": state.get_means(), "precs": state.get_precs(), "sqrts": state.get_sqrts(),
                                "log_odds": state.get_log_odds(), "particles": state.get_particles()})


def state_from_parts(template: MixtureFlowState, t: float, parts: dict[str, np.ndarray]) -> MixtureFlowState:
    """
    Rebuilds a state from unpacked segments, reusing the template's rule, mode and weights.
    """
    return MixtureFlowState(t, parts["means"], parts["precs"], parts["sqrts"], clamp_log_odds(parts["log_odds"]),
                            parts["particles"], template.get_particle_weights(), template.get_mode(),
                            template.get_rule())


def segment_rhs(mode: fr_gaussian.ExpectationMode, model: targets.TargetModel, rule: quadrature.QuadratureRule,
                parts: dict[str, np.ndarray], t: float) -> dict[str, np.ndarray]:
    """
    Time derivatives of every mixture segment.
    """
    precs: np.ndarray = gaussian_core.symmetrize(parts["precs"])
    log_odds: np.ndarray = clamp_log_odds(parts["log_odds"])
    moments: list[fr_gaussian.VMoments] = mixture_moments(mode, model, rule, parts["means"], precs, parts["sqrts"],
                                                          log_odds, t)
    coeffs: list[fr_gaussian.FlowCoeffs] = [m.coeffs(parts["means"][k]) for k, m in enumerate(moments)]
    rate: np.ndarray = _log_odds_rate(moments)

    # Hold log-odds at their clamp bounds
    at_bound: np.ndarray = log_odds != parts["log_odds"]
    rate[at_bound & (np.sign(rate) == np.sign(parts["log_odds"] - log_odds))] = 0.0
    rate[-1] = 0.0
    return {"means": np.stack([-m.sigma_grad for m in moments]),
            "precs": np.stack([m.expected_hess for m in moments]),
            "sqrts": np.stack([c.A @ parts["sqrts"][k] for k, c in enumerate(coeffs)]),
            "log_odds": rate,
            "particles": np.stack([parts["particles"][k] @ c.A.T + c.b for k, c in enumerate(coeffs)])}


def integrate_mixture_flow(init: MixtureFlowState, model: targets.TargetModel, T: float, ode: integrator.OdeConfig,
                           on_checkpoint: Callable[[MixtureFlowState], None] | None = None) -> MixtureFlowState:
    """
    Co-integrates all components, weights and per-component particles up to flow time T.

    Args:
        init (MixtureFlowState): Initial state.
        model (targets.TargetModel): The target.
        T (float): Horizon; T = 0 returns the initial state.
        ode (integrator.OdeConfig): Solver settings.
        on_checkpoint (Callable | None): Receives the state at each checkpoint.

    Returns:
        MixtureFlowState: The state at t = T.

    Raises:
        DivergedFlow: With the offending component index if an invariant fails.
    """
    if T < 0.0:
        raise ValueError(f"'{T}'. Horizon must be non-negative.")
    fr_gaussian.check_mode(init.get_mode(), model)
    if T == 0.0:
        return init
    layout, vector = state_vector(init)
    rule: quadrature.QuadratureRule = init.get_rule()
    initial_distances: list[np.ndarray] = [
        gaussian_core.mahalanobis(init.get_particles()[k], init.get_means()[k], init.get_precs()[k])
        for k in range(init.get_num_components())]

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        return layout.pack(segment_rhs(init.get_mode(), model, rule, layout.unpack(y), t))

    def hook(t: float, y: np.ndarray) -> None:
        parts: dict[str, np.ndarray] = layout.unpack(y)
        for k in range(init.get_num_components()):
            component: dict[str, np.ndarray] = {"mean": parts["means"][k], "prec": parts["precs"][k],
                                                "sqrt": parts["sqrts"][k], "particles": parts["particles"][k]}
            fr_gaussian.invariant_check(component, initial_distances[k], t, k)

    start: float = init.get_t()
    final, checkpoints = integrator.integrate(rhs, vector, start, start + T, ode, hooks=[hook])
    if on_checkpoint is not None:
        for checkpoint in checkpoints:
            on_checkpoint(state_from_parts(init, checkpoint.get_t(), layout.unpack(checkpoint.get_state())))
    LOGGER.info("Mixture flow with %d components reached t=%g", init.get_num_components(), start + T)
    return state_from_parts(init, start + T, layout.unpack(final))
