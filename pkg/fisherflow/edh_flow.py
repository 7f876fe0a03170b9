"""
Transient density parameters, exact Daum-Huang (EDH) flow coefficients and the pseudo-time schedule.

For a linear Gaussian model the transient density p(x | z; λ) ∝ p(x) p(z | x)^λ is Gaussian and the
EDH particle velocity A_λ x + b_λ transports it exactly.

Imports:
    numpy
    scipy.linalg
    gaussian_core: Gaussian parameterisations and densities.
    integrator: ODE integration of flat states.
    targets: Target models.

Classes:
    TransientParams
    EdhCoeffs

Functions:
    lambda_schedule, transient_params, edh_coeffs, edh_velocity, integrate_edh_particles,
    liouville_residual
"""

import logging

import numpy as np
import scipy.linalg

from fisherflow import gaussian_core
from fisherflow import integrator
from fisherflow import targets

LOGGER = logging.getLogger(__name__)


class TransientParams:
    """
    Mean and covariance of the transient density at pseudo-time λ.

    Attributes:
        __lam (float): λ in [0, 1].
        __gaussian (gaussian_core.GaussianParams): N(μ_λ, Σ_λ).
    """
    def __init__(self, lam: float, mean: np.ndarray, cov: np.ndarray) -> None:
        self.__lam: float = float(lam)
        self.__gaussian: gaussian_core.GaussianParams = gaussian_core.GaussianParams(mean, cov)

    def get_lambda(self) -> float:
        return self.__lam

    def get_mean(self) -> np.ndarray:
        return self.__gaussian.get_mean()

    def get_cov(self) -> np.ndarray:
        return self.__gaussian.get_cov()

    def get_gaussian(self) -> gaussian_core.GaussianParams:
        return self.__gaussian


class EdhCoeffs:
    """
    Affine EDH velocity coefficients x ↦ Ax + b.
    """
    def __init__(self, A: np.ndarray, b: np.ndarray) -> None:
        self.A: np.ndarray = np.asarray(A, dtype=float)
        self.b: np.ndarray = np.asarray(b, dtype=float)


def lambda_schedule(t: float) -> float:
    """
    Pseudo-time scaling λ(t) = 1 − e^{−t}.

    Args:
        t (float): Flow time, t ≥ 0.

    Returns:
        float: λ in [0, 1).
    """
    if t < 0.0:
        raise ValueError(f"'{t}'. Flow time must be non-negative.")
    return float(-np.expm1(-t))


def _check_lambda(lam: float) -> None:
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"'{lam}'. Lambda must be between 0 and 1.")


def _innovation(m: targets.LinearGaussianModel, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """
    Factors R + λHPHᵀ once and returns (P Hᵀ, Cholesky factor).
    """
    cov: np.ndarray = m.get_prior().get_cov()
    obs_matrix: np.ndarray = m.get_obs_matrix()
    cross: np.ndarray = cov @ obs_matrix.T
    innovation: np.ndarray = gaussian_core.symmetrize(m.get_obs_cov() + lam * obs_matrix @ cross)
    return cross, gaussian_core.cholesky_factor(innovation)


def transient_params(m: targets.LinearGaussianModel, lam: float) -> TransientParams:
    """
    Computes Σ_λ = P − λPHᵀ(R + λHPHᵀ)⁻¹HP and μ_λ = Σ_λ(P⁻¹x̂ + λHᵀR⁻¹z).

    Args:
        m (targets.LinearGaussianModel): The model.
        lam (float): λ in [0, 1].

    Returns:
        TransientParams: The transient Gaussian.
    """
    _check_lambda(lam)
    cross, innovation_chol = _innovation(m, lam)
    cov: np.ndarray = m.get_prior().get_cov() - lam * cross @ scipy.linalg.cho_solve(
        (innovation_chol, True), cross.T, check_finite=False)
    cov = gaussian_core.symmetrize(cov)
    information: np.ndarray = (m.get_prior_prec() @ m.get_prior().get_mean()
                               + lam * m.get_obs_matrix().T @ m.get_obs_prec() @ m.get_observation())
    return TransientParams(lam, cov @ information, cov)


def edh_coeffs(m: targets.LinearGaussianModel, lam: float) -> EdhCoeffs:
    """
    Computes A_λ = −½PHᵀ(R + λHPHᵀ)⁻¹H and b_λ = (I + 2λA_λ)(A_λx̂ + (I + λA_λ)PHᵀR⁻¹z).

    Args:
        m (targets.LinearGaussianModel): The model.
        lam (float): λ in [0, 1].

    Returns:
        EdhCoeffs: The coefficients.
    """
    _check_lambda(lam)
    cross, innovation_chol = _innovation(m, lam)
    obs_matrix: np.ndarray = m.get_obs_matrix()
    identity: np.ndarray = np.eye(m.get_dim())
    A: np.ndarray = -0.5 * cross @ scipy.linalg.cho_solve((innovation_chol, True), obs_matrix, check_finite=False)
    data_term: np.ndarray = cross @ m.get_obs_prec() @ m.get_observation()
    b: np.ndarray = (identity + 2.0 * lam * A) @ ((identity + lam * A) @ data_term + A @ m.get_prior().get_mean())
    return EdhCoeffs(A, b)


def edh_velocity(m: targets.LinearGaussianModel, lam: float, x: np.ndarray) -> np.ndarray:
    """
    Evaluates A_λ x + b_λ for a point or each row of a batch.
    """
    coeffs: EdhCoeffs = edh_coeffs(m, lam)
    return np.asarray(x, dtype=float) @ coeffs.A.T + coeffs.b


def integrate_edh_particles(m: targets.LinearGaussianModel, particles: np.ndarray, T: float,
                            ode: integrator.OdeConfig) -> np.ndarray:
    """
    Integrates particles under the time-scaled EDH flow dx/dt = (1 − λ(t))(A_{λ(t)}x + b_{λ(t)}).

    Args:
        m (targets.LinearGaussianModel): The model.
        particles (np.ndarray): Initial positions (M, n).
        T (float): Horizon.
        ode (integrator.OdeConfig): Solver settings.

    Returns:
        np.ndarray: Final positions (M, n).
    """
    particles = np.asarray(particles, dtype=float)
    shape: tuple[int, ...] = particles.shape

    def rhs(t: float, state: np.ndarray) -> np.ndarray:
        lam: float = lambda_schedule(t)
        positions: np.ndarray = state.reshape(shape)
        return ((1.0 - lam) * edh_velocity(m, lam, positions)).reshape(-1)

    final, _ = integrator.integrate(rhs, particles.reshape(-1), 0.0, T, ode)
    return final.reshape(shape)


def liouville_residual(m: targets.LinearGaussianModel, lam: float, points: np.ndarray,
                       dlam: float = 1e-5) -> np.ndarray:
    """
    Continuity-equation residual ∂λp + ∇·(p φ) of the transient density under the EDH velocity.

    ∂λp is taken by central differences; ∇·(pφ) = p tr(A) + ∇p·φ is exact.

    Args:
        m (targets.LinearGaussianModel): The model.
        lam (float): λ, with λ ± dlam inside [0, 1].
        points (np.ndarray): Evaluation points (M, n).
        dlam (float): Difference step. Defaults to 1e-5.

    Returns:
        np.ndarray: Residuals (M,).
    """
    points = np.asarray(points, dtype=float)
    upper: TransientParams = transient_params(m, lam + dlam)
    lower: TransientParams = transient_params(m, lam - dlam)
    centre: TransientParams = transient_params(m, lam)
    d_density: np.ndarray = (np.exp(gaussian_core.gaussian_logpdf(points, upper.get_gaussian()))
                             - np.exp(gaussian_core.gaussian_logpdf(points, lower.get_gaussian()))) / (2.0 * dlam)
    density: np.ndarray = np.exp(gaussian_core.gaussian_logpdf(points, centre.get_gaussian()))
    prec: np.ndarray = gaussian_core.spd_inverse(centre.get_cov())
    grad_density: np.ndarray = -density[:, None] * ((points - centre.get_mean()) @ prec)
    coeffs: EdhCoeffs = edh_coeffs(m, lam)
    velocity: np.ndarray = points @ coeffs.A.T + coeffs.b
    return d_density + density * np.trace(coeffs.A) + np.sum(grad_density * velocity, axis=1)
