"""
Gaussian Fisher-Rao parameter flow and its particle dynamics.

The variational Gaussian q = N(μ, Σ) descends KL(q || p(· | z)) along
    dμ/dt = −Σ E_q[∇V],   dΣ⁻¹/dt = E_q[∇²V],   V = log q − log p(x, z),
while particles move with the affine field Ãx + b̃, Ã = −½ΣE_q[∇²V], b̃ = −ΣE_q[∇V] − Ãμ.
Expectations are either quadrature over analytic derivatives of V, or the derivative-free
Stein forms that only evaluate V and never invert Σ.

Imports:
    enum
    numpy
    errors: Exception hierarchy of the library.
    gaussian_core: Gaussian parameterisations and densities.
    integrator: ODE integration of flat states.
    quadrature: Rules, transport and expectations.
    targets: Target models.

Classes:
    ExpectationMode
    FlowCoeffs
    VMoments
    GaussianFlowState

Functions:
    v_value, clip_curvature, stein_moments, analytic_moments, expect_v_moments, param_rhs,
    dynamics_coeffs, sqrt_rhs, inverse_sqrt_rhs, integrate_gaussian_flow, recover_particles
"""

import enum
import logging
from collections.abc import Callable

import numpy as np

from fisherflow import errors
from fisherflow import gaussian_core
from fisherflow import integrator
from fisherflow import quadrature
from fisherflow import targets

LOGGER = logging.getLogger(__name__)

DRIFT_TOL: float = 1e-3


class ExpectationMode(enum.Enum):
    """
    How Gaussian expectations of ∇V and ∇²V are evaluated.

    STEIN_PSD is Stein mode with the estimated curvature of V − log q clipped to be positive
    semi-definite, so the precision can only grow from its own decay term.
    """
    ANALYTIC = "analytic"
    STEIN = "stein"
    STEIN_PSD = "stein-psd"

    @property
    def is_stein(self) -> bool:
        return self is not ExpectationMode.ANALYTIC

    @property
    def clips_curvature(self) -> bool:
        return self is ExpectationMode.STEIN_PSD


class FlowCoeffs:
    """
    Affine particle velocity x ↦ Ax + b.
    """
    def __init__(self, A: np.ndarray, b: np.ndarray) -> None:
        self.A: np.ndarray = np.asarray(A, dtype=float)
        self.b: np.ndarray = np.asarray(b, dtype=float)


class VMoments:
    """
    Gaussian expectations of V and its derivatives.

    sigma_grad and sigma_hess hold ΣE[∇V] and ΣE[∇²V]. In Stein mode they are formed directly
    from centred particle statistics, so no covariance inverse is needed.

    Attributes:
        expected_v (float): E[V].
        expected_grad (np.ndarray): E[∇V].
        expected_hess (np.ndarray): E[∇²V].
        sigma_grad (np.ndarray): ΣE[∇V].
        sigma_hess (np.ndarray): ΣE[∇²V].
    """
    def __init__(self, expected_v: float, expected_grad: np.ndarray, expected_hess: np.ndarray,
                 sigma_grad: np.ndarray, sigma_hess: np.ndarray) -> None:
        self.expected_v: float = float(expected_v)
        self.expected_grad: np.ndarray = expected_grad
        self.expected_hess: np.ndarray = expected_hess
        self.sigma_grad: np.ndarray = sigma_grad
        self.sigma_hess: np.ndarray = sigma_hess

    def coeffs(self, mean: np.ndarray) -> FlowCoeffs:
        """
        Particle dynamics Ã = −½ΣE[∇²V], b̃ = −ΣE[∇V] − Ãμ.
        """
        A: np.ndarray = -0.5 * self.sigma_hess
        return FlowCoeffs(A, -self.sigma_grad - A @ mean)


def v_value(x: np.ndarray, q_logpdf: Callable[[np.ndarray], np.ndarray], model: targets.TargetModel):
    """
    Evaluates V(x) = log q(x) − log p(x, z).

    Args:
        x (np.ndarray): Point or batch.
        q_logpdf (Callable): Variational log density.
        model (targets.TargetModel): The target.

    Returns:
        float | np.ndarray: V at each point.
    """
    values = np.asarray(q_logpdf(x), dtype=float) - np.asarray(model.log_joint(x), dtype=float)
    if not np.all(np.isfinite(values)):
        raise errors.NonFiniteValue("V is not finite.")
    return float(values) if np.ndim(values) == 0 else values


def clip_curvature(matrix: np.ndarray) -> np.ndarray:
    """
    Projects a symmetric matrix onto the positive semi-definite cone.
    """
    values, vectors = np.linalg.eigh(gaussian_core.symmetrize(matrix))
    return gaussian_core.symmetrize((vectors * np.maximum(values, 0.0)) @ vectors.T)


def stein_moments(positions: np.ndarray, weights: np.ndarray, mean: np.ndarray, prec: np.ndarray,
                  v_values: np.ndarray, own_log_q: np.ndarray | None = None, clip: bool = False) -> VMoments:
    """
    Derivative-free moment estimates from V values at Gaussian particles.

    With μ̃ and Σ̃ the weighted particle mean and covariance, and R = V − own_log_q,
        ΣE[∇R]   ≈ Σ_i w_i (x_i − μ̃) R_i,
        ΣE[∇²R]Σ ≈ Σ_i w_i ((x_i − μ)(x_i − μ)ᵀ − Σ̃) R_i.
    Both sums vanish for constant R, so the estimates are unchanged by shifting V. The Gaussian's
    own log density contributes E[∇ log q] = 0 and E[∇² log q] = −Σ⁻¹ exactly, so passing it as
    own_log_q removes its sampling noise from the curvature estimate.

    Args:
        positions (np.ndarray): Particles (M, n) drawn from N(μ, Σ).
        weights (np.ndarray): Weights (M,).
        mean (np.ndarray): μ.
        prec (np.ndarray): Σ⁻¹.
        v_values (np.ndarray): V at the particles (M,).
        own_log_q (np.ndarray | None): log N(x_i; μ, Σ) at the particles, if it is part of V.
        clip (bool): Clip the curvature estimate of R to be positive semi-definite.

    Returns:
        VMoments: The estimates.
    """
    if not np.all(np.isfinite(v_values)):
        raise errors.NonFiniteValue("V is not finite at some particle.")
    expected_v: float = float(weights @ v_values)
    residual: np.ndarray = v_values if own_log_q is None else v_values - own_log_q
    particle_mean: np.ndarray = weights @ positions
    deviations: np.ndarray = positions - mean
    particle_cov: np.ndarray = np.einsum("m,mi,mj->ij", weights, deviations, deviations)
    weighted_r: np.ndarray = weights * residual
    sigma_grad: np.ndarray = weighted_r @ (positions - particle_mean)
    centred: np.ndarray = gaussian_core.symmetrize(
        np.einsum("m,mi,mj->ij", weighted_r, deviations, deviations) - particle_cov * np.sum(weighted_r))
    if clip:
        centred = clip_curvature(centred)
    expected_hess: np.ndarray = gaussian_core.symmetrize(prec @ centred @ prec)
    sigma_hess: np.ndarray = centred @ prec
    if own_log_q is not None:
        expected_hess = expected_hess - prec
        sigma_hess = sigma_hess - np.eye(prec.shape[0])
    return VMoments(expected_v, prec @ sigma_grad, expected_hess, sigma_grad, sigma_hess)


def analytic_moments(weights: np.ndarray, cov: np.ndarray, v_values: np.ndarray, grad_v: np.ndarray,
                     expected_hess: np.ndarray) -> VMoments:
    """
    Quadrature of analytic derivatives of V.

    Args:
        weights (np.ndarray): Weights (M,).
        cov (np.ndarray): Σ.
        v_values (np.ndarray): V (M,).
        grad_v (np.ndarray): ∇V (M, n).
        expected_hess (np.ndarray): Σ_i w_i ∇²V(x_i), already averaged (n, n).

    Returns:
        VMoments: The expectations.
    """
    for values in (v_values, grad_v, expected_hess):
        if not np.all(np.isfinite(values)):
            raise errors.NonFiniteValue("V or its derivatives are not finite at some particle.")
    expected_grad: np.ndarray = weights @ grad_v
    expected_hess = gaussian_core.symmetrize(expected_hess)
    return VMoments(float(weights @ v_values), expected_grad, expected_hess,
                    cov @ expected_grad, cov @ expected_hess)


def gaussian_v_moments(mode: ExpectationMode, model: targets.TargetModel, rule: quadrature.QuadratureRule,
                       mean: np.ndarray, prec: np.ndarray, sqrt: np.ndarray) -> VMoments:
    """
    Moments of V = log N(μ, Σ) − log p over the rule transported by (μ, L).
    """
    prec_chol: np.ndarray = gaussian_core.cholesky_factor(prec)
    positions: np.ndarray = rule.get_nodes() @ sqrt.T + mean
    weights: np.ndarray = rule.get_weights()
    log_q: np.ndarray = gaussian_core.precision_logpdf(positions, mean, prec_chol)
    v_values: np.ndarray = log_q - model.log_joint(positions)
    if mode.is_stein:
        return stein_moments(positions, weights, mean, prec, v_values, log_q, mode.clips_curvature)
    grad_v: np.ndarray = -(positions - mean) @ prec - model.grad_log_joint(positions)
    expected_hess: np.ndarray = -prec - model.weighted_hess_log_joint(positions, weights)
    return analytic_moments(weights, gaussian_core.spd_inverse(prec), v_values, grad_v, expected_hess)


def check_mode(mode: ExpectationMode, model: targets.TargetModel) -> None:
    """
    Raises ValueError if analytic mode is requested for a model without derivatives.
    """
    if mode is ExpectationMode.ANALYTIC and not (model.has_grad and model.has_hess):
        raise ValueError(f"'{type(model).__name__}'. Analytic mode needs a gradient and a Hessian.")


class GaussianFlowState:
    """
    State of the Gaussian Fisher-Rao particle flow.

    The precision form is primary and the square root is carried alongside. Particles are the
    propagated ensemble; they usually start as the rule transported by the initial square root,
    but any tracer set drawn from the initial Gaussian is allowed.

    Attributes:
        __t (float): Flow time.
        __params (gaussian_core.PrecisionParams): Mean and precision.
        __sqrt (gaussian_core.SqrtParams): Mean and square root.
        __particles (quadrature.ParticleSet): Propagated particles.
        __mode (ExpectationMode): Expectation mode.
        __rule (quadrature.QuadratureRule): Standard-normal rule for expectations.
    """
    def __init__(self, t: float, params: gaussian_core.PrecisionParams, sqrt: gaussian_core.SqrtParams,
                 particles: quadrature.ParticleSet, mode: ExpectationMode,
                 rule: quadrature.QuadratureRule) -> None:
        if params.get_dim() != sqrt.get_dim() or params.get_dim() != rule.get_dim():
            raise errors.DimensionMismatch("State components must share one dimension.")
        if particles.get_dim() != params.get_dim():
            raise errors.DimensionMismatch("Particles must have the state dimension.")
        self.__t: float = float(t)
        self.__params: gaussian_core.PrecisionParams = params
        self.__sqrt: gaussian_core.SqrtParams = sqrt
        self.__particles: quadrature.ParticleSet = particles
        self.__mode: ExpectationMode = ExpectationMode(mode)
        self.__rule: quadrature.QuadratureRule = rule

    @classmethod
    def initial(cls, gaussian: gaussian_core.GaussianParams, rule: quadrature.QuadratureRule,
                mode: ExpectationMode = ExpectationMode.STEIN,
                particles: np.ndarray | None = None) -> "GaussianFlowState":
        """
        Builds the state at t = 0.

        Args:
            gaussian (gaussian_core.GaussianParams): Initial variational Gaussian.
            rule (quadrature.QuadratureRule): Expectation rule.
            mode (ExpectationMode): Expectation mode. Defaults to Stein.
            particles (np.ndarray | None): Tracer particles. Defaults to the transported rule.

        Returns:
            GaussianFlowState: The initial state.
        """
        sqrt: gaussian_core.SqrtParams = gaussian.to_sqrt()
        if particles is None:
            particle_set: quadrature.ParticleSet = quadrature.transport(rule, gaussian.get_mean(), sqrt.get_sqrt())
        else:
            particles = np.asarray(particles, dtype=float)
            particle_set = quadrature.ParticleSet(particles, np.full(particles.shape[0], 1.0 / particles.shape[0]))
        return cls(0.0, gaussian.to_precision(), sqrt, particle_set, mode, rule)

    def get_t(self) -> float:
        return self.__t

    def get_params(self) -> gaussian_core.PrecisionParams:
        return self.__params

    def get_sqrt(self) -> gaussian_core.SqrtParams:
        return self.__sqrt

    def get_particles(self) -> quadrature.ParticleSet:
        return self.__particles

    def get_mode(self) -> ExpectationMode:
        return self.__mode

    def get_rule(self) -> quadrature.QuadratureRule:
        return self.__rule

    def get_mean(self) -> np.ndarray:
        return self.__params.get_mean()

    def get_prec(self) -> np.ndarray:
        return self.__params.get_prec()

    def get_dim(self) -> int:
        return self.__params.get_dim()

    def get_gaussian(self) -> gaussian_core.GaussianParams:
        return self.__params.to_gaussian()

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        """
        Variational log density at a batch of points.
        """
        return gaussian_core.precision_logpdf(np.atleast_2d(x), self.get_mean(), self.__params.get_prec_chol())

    def expectation_particles(self) -> quadrature.ParticleSet:
        """
        The rule transported by the current mean and square root.
        """
        return quadrature.transport(self.__rule, self.get_mean(), self.__sqrt.get_sqrt())

    def sqrt_consistency(self) -> float:
        """
        Gets max |LLᵀΣ⁻¹ − I|, the disagreement between square-root and precision forms.
        """
        sqrt: np.ndarray = self.__sqrt.get_sqrt()
        return float(np.max(np.abs(sqrt @ sqrt.T @ self.get_prec() - np.eye(self.get_dim()))))

    def to_checkpoint(self) -> dict:
        """
        Gets the JSON checkpoint {t, mean, cov_inv, L, particles} with row-major arrays.
        """
        return {"t": self.__t, "mean": self.get_mean().tolist(), "cov_inv": self.get_prec().tolist(),
                "L": self.__sqrt.get_sqrt().tolist(), "particles": self.__particles.get_positions().tolist()}


def expect_v_moments(state: GaussianFlowState, model: targets.TargetModel) -> tuple[float, np.ndarray, np.ndarray]:
    """
    Computes (E[V], E[∇V], E[∇²V]) under the state's Gaussian.

    Args:
        state (GaussianFlowState): Current state.
        model (targets.TargetModel): The target.

    Returns:
        tuple[float, np.ndarray, np.ndarray]: The three moments.
    """
    moments: VMoments = _state_moments(state, model)
    return moments.expected_v, moments.expected_grad, moments.expected_hess


def _state_moments(state: GaussianFlowState, model: targets.TargetModel) -> VMoments:
    check_mode(state.get_mode(), model)
    return gaussian_v_moments(state.get_mode(), model, state.get_rule(), state.get_mean(),
                              state.get_prec(), state.get_sqrt().get_sqrt())


def param_rhs(state: GaussianFlowState, model: targets.TargetModel) -> tuple[np.ndarray, np.ndarray]:
    """
    Parameter flow dμ/dt = −ΣE[∇V], dΣ⁻¹/dt = E[∇²V].

    Returns:
        tuple[np.ndarray, np.ndarray]: (dμ/dt, dΣ⁻¹/dt).
    """
    moments: VMoments = _state_moments(state, model)
    return -moments.sigma_grad, moments.expected_hess


def dynamics_coeffs(state: GaussianFlowState, model: targets.TargetModel) -> FlowCoeffs:
    """
    Particle dynamics coefficients Ã and b̃ at the current state.
    """
    return _state_moments(state, model).coeffs(state.get_mean())


def sqrt_rhs(state: GaussianFlowState, coeffs: FlowCoeffs) -> np.ndarray:
    """
    Square-root flow dL/dt = ÃL.
    """
    return coeffs.A @ state.get_sqrt().get_sqrt()


def inverse_sqrt_rhs(inverse_sqrt: np.ndarray, coeffs: FlowCoeffs) -> np.ndarray:
    """
    Inverse square-root flow dL⁻¹/dt = −L⁻¹Ã.
    """
    return -np.asarray(inverse_sqrt) @ coeffs.A


def _layout(n: int, count: int) -> integrator.StateLayout:
    return integrator.StateLayout([("mean", (n,)), ("prec", (n, n)), ("sqrt", (n, n)), ("particles", (count, n))])


def state_vector(state: GaussianFlowState) -> tuple[integrator.StateLayout, np.ndarray]:
    """
    Packs a state into a flat vector.
    """
    layout: integrator.StateLayout = _layout(state.get_dim(), state.get_particles().get_size())
    return layout, layout.pack({"mean": state.get_mean(), "prec": state.get_prec(),
                                "sqrt": state.get_sqrt().get_sqrt(),
                                "particles": state.get_particles().get_positions()})


def state_from_parts(template: GaussianFlowState, t: float, parts: dict[str, np.ndarray]) -> GaussianFlowState:
    """
    Rebuilds a state from unpacked segments, reusing the template's rule, mode and weights.
    """
    params: gaussian_core.PrecisionParams = gaussian_core.PrecisionParams(parts["mean"],
                                                                         gaussian_core.symmetrize(parts["prec"]))
    return GaussianFlowState(t, params, gaussian_core.SqrtParams(parts["mean"], parts["sqrt"]),
                             quadrature.ParticleSet(parts["particles"], template.get_particles().get_weights()),
                             template.get_mode(), template.get_rule())


def segment_rhs(mode: ExpectationMode, model: targets.TargetModel, rule: quadrature.QuadratureRule,
                parts: dict[str, np.ndarray], t: float) -> dict[str, np.ndarray]:
    """
    Time derivatives of the mean, precision, square root and particles.

    Raises:
        DivergedFlow: If the precision is no longer positive definite.
    """
    prec: np.ndarray = gaussian_core.symmetrize(parts["prec"])
    try:
        moments: VMoments = gaussian_v_moments(mode, model, rule, parts["mean"], prec, parts["sqrt"])
    except errors.NotPositiveDefinite as error:
        raise errors.DivergedFlow("Precision lost positive definiteness", t) from error
    coeffs: FlowCoeffs = moments.coeffs(parts["mean"])
    return {"mean": -moments.sigma_grad, "prec": moments.expected_hess, "sqrt": coeffs.A @ parts["sqrt"],
            "particles": parts["particles"] @ coeffs.A.T + coeffs.b}


def invariant_check(parts: dict[str, np.ndarray], initial_distances: np.ndarray, t: float,
                    component: int | None = None) -> None:
    """
    Checks positive definiteness, square-root consistency and Mahalanobis drift.

    Raises:
        DivergedFlow: If any check fails.
    """
    prec: np.ndarray = gaussian_core.symmetrize(parts["prec"])
    try:
        gaussian_core.cholesky_factor(prec)
    except errors.NotPositiveDefinite as error:
        raise errors.DivergedFlow("Precision lost positive definiteness", t, component) from error
    sqrt: np.ndarray = parts["sqrt"]
    if np.max(np.abs(sqrt @ sqrt.T @ prec - np.eye(prec.shape[0]))) > DRIFT_TOL:
        raise errors.DivergedFlow("Square root and precision disagree", t, component)
    distances: np.ndarray = gaussian_core.mahalanobis(parts["particles"], parts["mean"], prec)
    if np.any(np.abs(distances - initial_distances) > DRIFT_TOL * np.maximum(1.0, initial_distances)):
        raise errors.DivergedFlow("Mahalanobis distance drifted", t, component)


def integrate_gaussian_flow(init: GaussianFlowState, model: targets.TargetModel, T: float,
                            ode: integrator.OdeConfig,
                            on_checkpoint: Callable[[GaussianFlowState], None] | None = None) -> GaussianFlowState:
    """
    Co-integrates the Gaussian parameters, square root and particles up to flow time T.

    Args:
        init (GaussianFlowState): Initial state.
        model (targets.TargetModel): The target.
        T (float): Horizon; T = 0 returns the initial state.
        ode (integrator.OdeConfig): Solver settings.
        on_checkpoint (Callable | None): Receives the state at each checkpoint.

    Returns:
        GaussianFlowState: The state at t = T.

    Raises:
        DivergedFlow: If an invariant fails during integration.
    """
    if T < 0.0:
        raise ValueError(f"'{T}'. Horizon must be non-negative.")
    check_mode(init.get_mode(), model)
    if T == 0.0:
        return init
    layout, vector = state_vector(init)
    rule: quadrature.QuadratureRule = init.get_rule()
    initial_distances: np.ndarray = gaussian_core.mahalanobis(init.get_particles().get_positions(),
                                                              init.get_mean(), init.get_prec())

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        return layout.pack(segment_rhs(init.get_mode(), model, rule, layout.unpack(y), t))

    def hook(t: float, y: np.ndarray) -> None:
        invariant_check(layout.unpack(y), initial_distances, t)

    start: float = init.get_t()
    final, checkpoints = integrator.integrate(rhs, vector, start, start + T, ode, hooks=[hook])
    if on_checkpoint is not None:
        for checkpoint in checkpoints:
            on_checkpoint(state_from_parts(init, checkpoint.get_t(), layout.unpack(checkpoint.get_state())))
    LOGGER.info("Gaussian flow reached t=%g", start + T)
    return state_from_parts(init, start + T, layout.unpack(final))


def recover_particles(final: GaussianFlowState, base_nodes: quadrature.QuadratureRule) -> quadrature.ParticleSet:
    """
    Recovers particles as L_T ξ_i + μ_T from standard-normal nodes.
    """
    return quadrature.transport(base_nodes, final.get_mean(), final.get_sqrt().get_sqrt())
