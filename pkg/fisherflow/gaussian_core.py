"""
Gaussian and Gaussian-mixture parameterisations, conversions, densities and closed-form oracles.

All value types are immutable: arrays are copied on construction and marked read-only,
so instances can be shared between threads.

Imports:
    numpy
    scipy.linalg
    scipy.special
    errors: Exception hierarchy of the library.

Classes:
    GaussianParams
    PrecisionParams
    SqrtParams
    NaturalGaussianParams
    MixtureParams

Functions:
    symmetrize, cholesky_factor, spd_inverse, gaussian_logpdf, precision_logpdf,
    gaussian_kl, mahalanobis, weights_from_log_odds, mixture_logpdf,
    mixture_log_terms, mixture_score
"""

import numpy as np
import scipy.linalg
import scipy.special

from fisherflow import errors

SYMMETRY_TOL: float = 1e-12
LOG_2PI: float = float(np.log(2.0 * np.pi))


def _frozen(values, ndim: int, name: str) -> np.ndarray:
    """
    Copies values into a read-only float array of the given rank.

    Args:
        values: Array-like input.
        ndim (int): Required number of dimensions.
        name (str): Name used in error messages.

    Returns:
        np.ndarray: The read-only copy.

    Raises:
        DimensionMismatch: If the rank is wrong.
        NonFiniteValue: If any entry is inf or nan.
    """
    array: np.ndarray = np.array(values, dtype=float, copy=True)
    if array.ndim != ndim:
        raise errors.DimensionMismatch(f"'{array.shape}'. {name} must have {ndim} dimension(s).")
    if not np.all(np.isfinite(array)):
        raise errors.NonFiniteValue(f"{name} contains non-finite entries.")
    array.setflags(write=False)
    return array


def _check_square(matrix: np.ndarray, n: int, name: str) -> None:
    if matrix.shape != (n, n):
        raise errors.DimensionMismatch(f"'{matrix.shape}'. {name} must be {n}x{n}.")


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    """
    Returns (M + Mᵀ)/2, applied over the last two axes.
    """
    return 0.5 * (matrix + np.swapaxes(matrix, -1, -2))


def cholesky_factor(cov: np.ndarray) -> np.ndarray:
    """
    Computes the lower-triangular Cholesky factor of a symmetric positive definite matrix.

    Args:
        cov (np.ndarray): Symmetric matrix (n x n).

    Returns:
        np.ndarray: Lower-triangular L with positive diagonal and LLᵀ = cov.

    Raises:
        DimensionMismatch: If the matrix is not square.
        NotPositiveDefinite: If the matrix is not symmetric or a pivot is not positive.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise errors.DimensionMismatch(f"'{cov.shape}'. Matrix must be square.")
    if not np.all(np.isfinite(cov)):
        raise errors.NotPositiveDefinite("Matrix contains non-finite entries.")
    scale: float = max(1.0, float(np.max(np.abs(cov))) if cov.size else 1.0)
    if np.max(np.abs(cov - cov.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise errors.NotPositiveDefinite("Matrix is not symmetric.")

    # Error handling
    try:
        chol: np.ndarray = scipy.linalg.cholesky(symmetrize(cov), lower=True, check_finite=False)
    except np.linalg.LinAlgError as error:
        raise errors.NotPositiveDefinite(f"Cholesky factorisation failed: {error}") from error
    if np.any(np.diag(chol) <= 0.0):
        raise errors.NotPositiveDefinite("Cholesky factor has a non-positive pivot.")
    return chol


def spd_inverse(matrix: np.ndarray) -> np.ndarray:
    """
    Inverts a symmetric positive definite matrix through its Cholesky factor.

    Args:
        matrix (np.ndarray): Symmetric positive definite matrix.

    Returns:
        np.ndarray: The symmetric inverse.
    """
    chol: np.ndarray = cholesky_factor(matrix)
    identity: np.ndarray = np.eye(chol.shape[0])
    return symmetrize(scipy.linalg.cho_solve((chol, True), identity, check_finite=False))


def as_batch(x: np.ndarray, n: int) -> tuple[np.ndarray, bool]:
    """
    Views a point or a batch of points as a (M, n) array.

    Returns:
        tuple[np.ndarray, bool]: The batch and whether the input was a single point.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (n,) or x.ndim > 2:
        raise errors.DimensionMismatch(f"'{x.shape}'. Points must have trailing dimension {n}.")
    return x.reshape(-1, n), x.ndim == 1


def gaussian_logpdf(x: np.ndarray, g: "GaussianParams") -> float | np.ndarray:
    """
    Evaluates log N(x; μ, Σ) at a point or at each row of a batch.

    Args:
        x (np.ndarray): Point (n,) or batch (M, n).
        g (GaussianParams): The Gaussian.

    Returns:
        float | np.ndarray: Log density, scalar for a point and (M,) for a batch.
    """
    batch, single = as_batch(x, g.get_dim())
    chol: np.ndarray = g.get_chol()
    whitened: np.ndarray = scipy.linalg.solve_triangular(chol, (batch - g.get_mean()).T,
                                                         lower=True, check_finite=False)
    log_det: float = 2.0 * float(np.sum(np.log(np.diag(chol))))
    values: np.ndarray = -0.5 * (g.get_dim() * LOG_2PI + log_det + np.sum(whitened ** 2, axis=0))
    return float(values[0]) if single else values


def precision_logpdf(x: np.ndarray, mean: np.ndarray, prec_chol: np.ndarray) -> np.ndarray:
    """
    Evaluates log N(x; μ, Σ) for a batch given the Cholesky factor of Σ⁻¹.

    Args:
        x (np.ndarray): Batch (M, n).
        mean (np.ndarray): Mean (n,).
        prec_chol (np.ndarray): Lower Cholesky factor of the precision.

    Returns:
        np.ndarray: Log densities (M,).
    """
    n: int = mean.shape[0]
    projected: np.ndarray = (x - mean) @ prec_chol
    half_log_det_prec: float = float(np.sum(np.log(np.diag(prec_chol))))
    return -0.5 * (n * LOG_2PI + np.sum(projected ** 2, axis=-1)) + half_log_det_prec


def gaussian_kl(q: "GaussianParams", p: "GaussianParams") -> float:
    """
    Closed-form KL(q || p) between two Gaussians.

    Args:
        q (GaussianParams): First argument of the divergence.
        p (GaussianParams): Second argument of the divergence.

    Returns:
        float: The divergence, clamped at 0 against rounding.

    Raises:
        DimensionMismatch: If the dimensions differ.
    """
    if q.get_dim() != p.get_dim():
        raise errors.DimensionMismatch(f"'{q.get_dim()}' vs '{p.get_dim()}'. Dimensions must agree.")
    if np.array_equal(q.get_mean(), p.get_mean()) and np.array_equal(q.get_cov(), p.get_cov()):
        return 0.0
    chol_p: np.ndarray = p.get_chol()
    chol_q: np.ndarray = q.get_chol()
    ratio: np.ndarray = scipy.linalg.solve_triangular(chol_p, chol_q, lower=True, check_finite=False)
    shift: np.ndarray = scipy.linalg.solve_triangular(chol_p, p.get_mean() - q.get_mean(),
                                                      lower=True, check_finite=False)
    log_det_ratio: float = 2.0 * float(np.sum(np.log(np.diag(chol_p))) - np.sum(np.log(np.diag(chol_q))))
    kl: float = 0.5 * (float(np.sum(ratio ** 2)) + float(shift @ shift) - q.get_dim() + log_det_ratio)
    return max(kl, 0.0)


def mahalanobis(x: np.ndarray, mean: np.ndarray, prec: np.ndarray) -> float | np.ndarray:
    """
    Squared Mahalanobis form (x − μ)ᵀ prec (x − μ) for a point or each row of a batch.

    Args:
        x (np.ndarray): Point (n,) or batch (M, n).
        mean (np.ndarray): Mean (n,).
        prec (np.ndarray): Precision matrix (n x n).

    Returns:
        float | np.ndarray: The non-negative form.

    Raises:
        DimensionMismatch: If shapes disagree.
    """
    mean = np.asarray(mean, dtype=float)
    prec = np.asarray(prec, dtype=float)
    n: int = mean.shape[0]
    _check_square(prec, n, "Precision")
    batch, single = as_batch(x, n)
    diff: np.ndarray = batch - mean
    values: np.ndarray = np.maximum(np.einsum("mi,ij,mj->m", diff, prec, diff), 0.0)
    return float(values[0]) if single else values


def weights_from_log_odds(log_odds: np.ndarray) -> np.ndarray:
    """
    Recovers mixture weights from log-odds with the last entry pinned to 0.

    Args:
        log_odds (np.ndarray): Log-odds vector (K,).

    Returns:
        np.ndarray: Weights on the simplex.
    """
    return scipy.special.softmax(np.asarray(log_odds, dtype=float))


def mixture_log_terms(x: np.ndarray, means: np.ndarray, prec_chols: np.ndarray,
                      log_weights: np.ndarray) -> np.ndarray:
    """
    Per-component terms log π_k + log N(x; μ_k, Σ_k) for a batch.

    Args:
        x (np.ndarray): Batch (M, n).
        means (np.ndarray): Component means (K, n).
        prec_chols (np.ndarray): Cholesky factors of the component precisions (K, n, n).
        log_weights (np.ndarray): Log weights (K,).

    Returns:
        np.ndarray: Terms (K, M).
    """
    return np.stack([log_weights[k] + precision_logpdf(x, means[k], prec_chols[k])
                     for k in range(means.shape[0])])


def mixture_score(x: np.ndarray, means: np.ndarray, precs: np.ndarray, prec_chols: np.ndarray,
                  log_weights: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Log density, gradient and Hessian of a Gaussian mixture at a batch of points.

    Args:
        x (np.ndarray): Batch (M, n).
        means (np.ndarray): Component means (K, n).
        precs (np.ndarray): Component precisions (K, n, n).
        prec_chols (np.ndarray): Their Cholesky factors (K, n, n).
        log_weights (np.ndarray): Log weights (K,).

    Returns:
        tuple[np.ndarray, np.ndarray, np.ndarray]: log q (M,), ∇log q (M, n), ∇²log q (M, n, n).
    """
    terms: np.ndarray = mixture_log_terms(x, means, prec_chols, log_weights)
    log_q: np.ndarray = scipy.special.logsumexp(terms, axis=0)
    resp: np.ndarray = np.exp(terms - log_q)  # (K, M)
    scores: np.ndarray = -np.einsum("kij,kmj->kmi", precs, x[None, :, :] - means[:, None, :])
    grad: np.ndarray = np.einsum("km,kmi->mi", resp, scores)
    hess: np.ndarray = (np.einsum("km,kmi,kmj->mij", resp, scores, scores)
                        - np.einsum("km,kij->mij", resp, precs)
                        - np.einsum("mi,mj->mij", grad, grad))
    return log_q, grad, symmetrize(hess)


def mixture_logpdf(x: np.ndarray, m: "MixtureParams") -> float | np.ndarray:
    """
    Evaluates log Σ_k π_k N(x; μ_k, Σ_k) with log-sum-exp.

    Args:
        x (np.ndarray): Point (n,) or batch (M, n).
        m (MixtureParams): The mixture.

    Returns:
        float | np.ndarray: Log density, scalar for a point and (M,) for a batch.
    """
    batch, single = as_batch(x, m.get_dim())
    log_weights: np.ndarray = m.get_log_weights()
    terms: np.ndarray = np.stack([log_weights[k] + gaussian_logpdf(batch, component)
                                  for k, component in enumerate(m.get_components())])
    values: np.ndarray = scipy.special.logsumexp(terms, axis=0)
    return float(values[0]) if single else values


class GaussianParams:
    """
    A Gaussian in mean-covariance form.

    Attributes:
        __mean (np.ndarray): Mean vector (n,).
        __cov (np.ndarray): Symmetric positive definite covariance (n x n).
        __chol (np.ndarray): Lower Cholesky factor of the covariance.
    """
    def __init__(self, mean: np.ndarray, cov: np.ndarray) -> None:
        """
        Initialises and validates the Gaussian.

        Args:
            mean (np.ndarray): Mean vector.
            cov (np.ndarray): Covariance matrix, symmetric to 1e-12 and positive definite.

        Raises:
            DimensionMismatch: If shapes disagree.
            NotPositiveDefinite: If the covariance is not symmetric positive definite.
        """
        self.__mean: np.ndarray = _frozen(mean, 1, "Mean")
        cov_array: np.ndarray = _frozen(cov, 2, "Covariance")
        _check_square(cov_array, self.__mean.shape[0], "Covariance")
        self.__chol: np.ndarray = cholesky_factor(cov_array)
        self.__chol.setflags(write=False)
        self.__cov: np.ndarray = symmetrize(cov_array)
        self.__cov.setflags(write=False)

    def get_mean(self) -> np.ndarray:
        return self.__mean

    def get_cov(self) -> np.ndarray:
        return self.__cov

    def get_chol(self) -> np.ndarray:
        return self.__chol

    def get_dim(self) -> int:
        return self.__mean.shape[0]

    def to_precision(self) -> "PrecisionParams":
        """
        Converts to mean-precision form.
        """
        return PrecisionParams(self.__mean, spd_inverse(self.__cov))

    def to_sqrt(self) -> "SqrtParams":
        """
        Converts to mean-square-root form with the Cholesky factor.
        """
        return SqrtParams(self.__mean, self.__chol)

    def to_natural(self) -> "NaturalGaussianParams":
        """
        Converts to natural parameters (Σ⁻¹μ, −½Σ⁻¹).
        """
        prec: np.ndarray = spd_inverse(self.__cov)
        return NaturalGaussianParams(prec @ self.__mean, -0.5 * prec)

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """
        Draws samples from the Gaussian.

        Args:
            count (int): Number of samples.
            rng (np.random.Generator): Seeded generator.

        Returns:
            np.ndarray: Samples (count, n).
        """
        return self.__mean + rng.standard_normal((count, self.get_dim())) @ self.__chol.T


class PrecisionParams:
    """
    A Gaussian in mean-precision form.

    Attributes:
        __mean (np.ndarray): Mean vector (n,).
        __prec (np.ndarray): Symmetric positive definite precision (n x n).
        __prec_chol (np.ndarray): Lower Cholesky factor of the precision.
    """
    def __init__(self, mean: np.ndarray, prec: np.ndarray) -> None:
        self.__mean: np.ndarray = _frozen(mean, 1, "Mean")
        prec_array: np.ndarray = _frozen(prec, 2, "Precision")
        _check_square(prec_array, self.__mean.shape[0], "Precision")
        self.__prec_chol: np.ndarray = cholesky_factor(prec_array)
        self.__prec_chol.setflags(write=False)
        self.__prec: np.ndarray = symmetrize(prec_array)
        self.__prec.setflags(write=False)

    def get_mean(self) -> np.ndarray:
        return self.__mean

    def get_prec(self) -> np.ndarray:
        return self.__prec

    def get_prec_chol(self) -> np.ndarray:
        return self.__prec_chol

    def get_dim(self) -> int:
        return self.__mean.shape[0]

    def to_gaussian(self) -> GaussianParams:
        """
        Converts back to mean-covariance form.
        """
        return GaussianParams(self.__mean, spd_inverse(self.__prec))


class SqrtParams:
    """
    A Gaussian in mean-square-root form, Σ = LLᵀ.

    L is lower triangular when it comes from a Cholesky factorisation. A square root
    propagated by the flow dL/dt = ÃL is a general nonsingular matrix and is accepted too.

    Attributes:
        __mean (np.ndarray): Mean vector (n,).
        __sqrt (np.ndarray): Nonsingular square root (n x n).
    """
    def __init__(self, mean: np.ndarray, sqrt: np.ndarray) -> None:
        self.__mean: np.ndarray = _frozen(mean, 1, "Mean")
        self.__sqrt: np.ndarray = _frozen(sqrt, 2, "Square root")
        _check_square(self.__sqrt, self.__mean.shape[0], "Square root")
        sign, _ = np.linalg.slogdet(self.__sqrt)
        if sign == 0:
            raise errors.NotPositiveDefinite("Square root is singular.")

    def get_mean(self) -> np.ndarray:
        return self.__mean

    def get_sqrt(self) -> np.ndarray:
        return self.__sqrt

    def get_dim(self) -> int:
        return self.__mean.shape[0]

    def to_gaussian(self) -> GaussianParams:
        return GaussianParams(self.__mean, symmetrize(self.__sqrt @ self.__sqrt.T))


class NaturalGaussianParams:
    """
    A Gaussian in natural parameters γ = Σ⁻¹μ and Γ = −½Σ⁻¹.

    Attributes:
        __gamma (np.ndarray): First natural parameter (n,).
        __big_gamma (np.ndarray): Negative definite second natural parameter (n x n).
    """
    def __init__(self, gamma: np.ndarray, big_gamma: np.ndarray) -> None:
        self.__gamma: np.ndarray = _frozen(gamma, 1, "gamma")
        self.__big_gamma: np.ndarray = _frozen(big_gamma, 2, "Gamma")
        _check_square(self.__big_gamma, self.__gamma.shape[0], "Gamma")
        cholesky_factor(-self.__big_gamma) # Negative definiteness check

    def get_gamma(self) -> np.ndarray:
        return self.__gamma

    def get_big_gamma(self) -> np.ndarray:
        return self.__big_gamma

    def get_dim(self) -> int:
        return self.__gamma.shape[0]

    def to_gaussian(self) -> GaussianParams:
        prec: np.ndarray = -2.0 * symmetrize(self.__big_gamma)
        prec_chol: np.ndarray = cholesky_factor(prec)
        mean: np.ndarray = scipy.linalg.cho_solve((prec_chol, True), self.__gamma, check_finite=False)
        return GaussianParams(mean, spd_inverse(prec))


class MixtureParams:
    """
    A Gaussian mixture with log-odds weight parameters, the last log-odd pinned to 0.

    Attributes:
        __components (tuple[GaussianParams, ...]): The K components.
        __log_odds (np.ndarray): Log-odds (K,), last entry exactly 0.
    """
    def __init__(self, components: list[GaussianParams], log_odds: np.ndarray | None = None) -> None:
        """
        Initialises and validates the mixture.

        Args:
            components (list[GaussianParams]): The components, all of one dimension.
            log_odds (np.ndarray | None): Log-odds with last entry 0. Defaults to uniform weights.

        Raises:
            ValueError: If there are no components or the last log-odd is not 0.
            DimensionMismatch: If component dimensions or the log-odds length disagree.
        """
        if len(components) == 0:
            raise ValueError("A mixture needs at least one component.")
        self.__components: tuple[GaussianParams, ...] = tuple(components)
        dims: set[int] = {component.get_dim() for component in self.__components}
        if len(dims) != 1:
            raise errors.DimensionMismatch(f"'{sorted(dims)}'. Component dimensions must agree.")
        if log_odds is None:
            log_odds = np.zeros(len(components))
        self.__log_odds: np.ndarray = _frozen(log_odds, 1, "Log-odds")
        if self.__log_odds.shape[0] != len(components):
            raise errors.DimensionMismatch(f"'{self.__log_odds.shape[0]}'. Log-odds length must equal K.")
        if self.__log_odds[-1] != 0.0:
            raise ValueError(f"'{self.__log_odds[-1]}'. The last log-odd must be pinned to 0.")

    @classmethod
    def from_weights(cls, components: list[GaussianParams], weights: np.ndarray) -> "MixtureParams":
        """
        Builds a mixture from positive weights, normalising them.

        Args:
            components (list[GaussianParams]): The components.
            weights (np.ndarray): Positive weights (K,).

        Returns:
            MixtureParams: The mixture.
        """
        weights = np.asarray(weights, dtype=float)
        if np.any(weights <= 0.0):
            raise ValueError(f"'{weights}'. Mixture weights must be strictly positive.")
        log_weights: np.ndarray = np.log(weights)
        return cls(components, log_weights - log_weights[-1])

    def get_components(self) -> tuple[GaussianParams, ...]:
        return self.__components

    def get_log_odds(self) -> np.ndarray:
        return self.__log_odds

    def get_weights(self) -> np.ndarray:
        return weights_from_log_odds(self.__log_odds)

    def get_log_weights(self) -> np.ndarray:
        return self.__log_odds - scipy.special.logsumexp(self.__log_odds)

    def get_dim(self) -> int:
        return self.__components[0].get_dim()

    def get_num_components(self) -> int:
        return len(self.__components)

    def get_means(self) -> np.ndarray:
        return np.stack([component.get_mean() for component in self.__components])

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """
        Draws samples by first drawing component labels from the weights.
        """
        labels: np.ndarray = rng.choice(self.get_num_components(), size=count, p=self.get_weights())
        draws: np.ndarray = np.empty((count, self.get_dim()))
        for k, component in enumerate(self.__components):
            chosen: np.ndarray = labels == k
            draws[chosen] = component.sample(int(np.sum(chosen)), rng)
        return draws
