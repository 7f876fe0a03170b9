"""
Target models exposing log p(x, z), its gradient and Hessian, and the analytic posteriors used as oracles.

Every evaluation accepts a point (n,) or a batch (M, n) and returns a matching scalar or array.

Imports:
    numpy
    scipy.linalg
    scipy.special
    errors: Exception hierarchy of the library.
    gaussian_core: Gaussian parameterisations and densities.

Classes:
    TargetModel
    LinearGaussianModel
    MixturePriorLinearModel
    RangeModel
    LogisticRegressionModel
    FunnelModel

Functions:
    log_joint, grad_log_joint, hess_log_joint, kalman_posterior, gmm_posterior_analytic,
    generate_logreg_dataset
"""

import logging
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.special

from fisherflow import errors
from fisherflow import gaussian_core

LOGGER = logging.getLogger(__name__)

SINGULAR_RADIUS: float = 1e-8


class TargetModel:
    """
    Base class for evaluable joint densities.

    Subclasses implement the batch methods _log_joint, _grad and _hess on (M, n) arrays.

    Attributes:
        __dim (int): State dimension n.
    """
    has_grad: bool = True
    has_hess: bool = True

    def __init__(self, dim: int) -> None:
        if dim < 1:
            raise ValueError(f"'{dim}'. Dimension must be a positive integer.")
        self.__dim: int = dim

    def get_dim(self) -> int:
        return self.__dim

    def __evaluate(self, method, x: np.ndarray, what: str):
        """
        Runs a batch method on a point or batch, checking the result is finite.
        """
        batch, single = gaussian_core.as_batch(x, self.__dim)
        with np.errstate(over="ignore", invalid="ignore"):
            values: np.ndarray = method(batch)
        if not np.all(np.isfinite(values)):
            raise errors.NonFiniteValue(f"{type(self).__name__} {what} is not finite.")
        if single:
            return float(values[0]) if values.ndim == 1 else values[0]
        return values

    def log_joint(self, x: np.ndarray):
        """
        Evaluates log p(x, z), or the unnormalised log posterior for models without an observation.

        Args:
            x (np.ndarray): Point (n,) or batch (M, n).

        Returns:
            float | np.ndarray: Scalar or (M,) values.

        Raises:
            NonFiniteValue: On overflow.
        """
        return self.__evaluate(self._log_joint, x, "log density")

    def grad_log_joint(self, x: np.ndarray):
        """
        Evaluates ∇ log p(x, z).

        Returns:
            np.ndarray: (n,) or (M, n).
        """
        if not self.has_grad:
            raise NotImplementedError(f"{type(self).__name__} has no gradient.")
        return self.__evaluate(self._grad, x, "gradient")

    def hess_log_joint(self, x: np.ndarray):
        """
        Evaluates ∇² log p(x, z).

        Returns:
            np.ndarray: (n, n) or (M, n, n).
        """
        if not self.has_hess:
            raise NotImplementedError(f"{type(self).__name__} has no Hessian.")
        return self.__evaluate(self._hess, x, "Hessian")

    def weighted_hess_log_joint(self, x: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """
        Evaluates the weighted sum Σ_i w_i ∇² log p(x_i, z) over a batch.

        Models whose Hessian has a low-rank structure override _weighted_hess to skip the (M, n, n) batch.

        Args:
            x (np.ndarray): Batch (M, n).
            weights (np.ndarray): Weights (M,).

        Returns:
            np.ndarray: (n, n).
        """
        if not self.has_hess:
            raise NotImplementedError(f"{type(self).__name__} has no Hessian.")
        batch, _ = gaussian_core.as_batch(x, self.__dim)
        weights = np.asarray(weights, dtype=float).reshape(-1)
        # Error handling
        if weights.shape[0] != batch.shape[0]:
            raise errors.DimensionMismatch(f"'{weights.shape[0]}'. Need one weight per point ({batch.shape[0]}).")
        with np.errstate(over="ignore", invalid="ignore"):
            values: np.ndarray = self._weighted_hess(batch, weights)
        if not np.all(np.isfinite(values)):
            raise errors.NonFiniteValue(f"{type(self).__name__} Hessian is not finite.")
        return values

    def _log_joint(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _hess(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _weighted_hess(self, x: np.ndarray, weights: np.ndarray) -> np.ndarray:
        return np.tensordot(weights, self._hess(x), axes=1)


def log_joint(model: TargetModel, x: np.ndarray):
    return model.log_joint(x)


def grad_log_joint(model: TargetModel, x: np.ndarray):
    return model.grad_log_joint(x)


def hess_log_joint(model: TargetModel, x: np.ndarray):
    return model.hess_log_joint(x)


class _LinearLikelihood:
    """
    Shared Gaussian likelihood z ~ N(Hx, R).

    Attributes:
        __obs_matrix (np.ndarray): H (m x n).
        __obs_cov (np.ndarray): R (m x m).
        __obs_prec (np.ndarray): R⁻¹.
        __z (np.ndarray): Observation (m,).
        __noise (gaussian_core.GaussianParams): N(0, R) used for the residual density.
    """
    def __init__(self, obs_matrix: np.ndarray, obs_cov: np.ndarray, z: np.ndarray, dim: int) -> None:
        self.__obs_matrix: np.ndarray = np.array(obs_matrix, dtype=float, ndmin=2)
        self.__z: np.ndarray = np.array(z, dtype=float, ndmin=1)
        m: int = self.__z.shape[0]
        if self.__obs_matrix.shape != (m, dim):
            raise errors.DimensionMismatch(f"'{self.__obs_matrix.shape}'. Observation matrix must be {m}x{dim}.")
        self.__noise: gaussian_core.GaussianParams = gaussian_core.GaussianParams(np.zeros(m), obs_cov)
        self.__obs_cov: np.ndarray = self.__noise.get_cov()
        self.__obs_prec: np.ndarray = gaussian_core.spd_inverse(self.__obs_cov)

    def get_obs_matrix(self) -> np.ndarray:
        return self.__obs_matrix

    def get_obs_cov(self) -> np.ndarray:
        return self.__obs_cov

    def get_obs_prec(self) -> np.ndarray:
        return self.__obs_prec

    def get_observation(self) -> np.ndarray:
        return self.__z

    def log_likelihood(self, x: np.ndarray) -> np.ndarray:
        return gaussian_core.gaussian_logpdf(self.__z - x @ self.__obs_matrix.T, self.__noise)

    def grad(self, x: np.ndarray) -> np.ndarray:
        return (self.__z - x @ self.__obs_matrix.T) @ self.__obs_prec @ self.__obs_matrix

    def hess(self) -> np.ndarray:
        return -self.__obs_matrix.T @ self.__obs_prec @ self.__obs_matrix

    def predictive(self, prior: gaussian_core.GaussianParams) -> gaussian_core.GaussianParams:
        """
        Gets the predictive distribution N(z; Hx̂, R + HPHᵀ) of the observation.
        """
        cov: np.ndarray = self.__obs_cov + self.__obs_matrix @ prior.get_cov() @ self.__obs_matrix.T
        return gaussian_core.GaussianParams(self.__obs_matrix @ prior.get_mean(), gaussian_core.symmetrize(cov))


class LinearGaussianModel(TargetModel):
    """
    Gaussian prior N(x̂, P) with linear Gaussian observation z = Hx + v, v ~ N(0, R).

    Attributes:
        __prior (gaussian_core.GaussianParams): The prior.
        __prior_prec (np.ndarray): P⁻¹.
        __likelihood (_LinearLikelihood): The observation model.
    """
    def __init__(self, prior_mean: np.ndarray, prior_cov: np.ndarray, obs_matrix: np.ndarray,
                 obs_cov: np.ndarray, z: np.ndarray) -> None:
        """
        Initialises the model.

        Args:
            prior_mean (np.ndarray): x̂.
            prior_cov (np.ndarray): P, positive definite.
            obs_matrix (np.ndarray): H.
            obs_cov (np.ndarray): R, positive definite.
            z (np.ndarray): Observation.
        """
        self.__prior: gaussian_core.GaussianParams = gaussian_core.GaussianParams(prior_mean, prior_cov)
        super().__init__(self.__prior.get_dim())
        self.__prior_prec: np.ndarray = gaussian_core.spd_inverse(self.__prior.get_cov())
        self.__likelihood: _LinearLikelihood = _LinearLikelihood(obs_matrix, obs_cov, z, self.get_dim())

    def get_prior(self) -> gaussian_core.GaussianParams:
        return self.__prior

    def get_prior_prec(self) -> np.ndarray:
        return self.__prior_prec

    def get_obs_matrix(self) -> np.ndarray:
        return self.__likelihood.get_obs_matrix()

    def get_obs_cov(self) -> np.ndarray:
        return self.__likelihood.get_obs_cov()

    def get_obs_prec(self) -> np.ndarray:
        return self.__likelihood.get_obs_prec()

    def get_observation(self) -> np.ndarray:
        return self.__likelihood.get_observation()

    def _log_joint(self, x: np.ndarray) -> np.ndarray:
        return gaussian_core.gaussian_logpdf(x, self.__prior) + self.__likelihood.log_likelihood(x)

    def _grad(self, x: np.ndarray) -> np.ndarray:
        return -(x - self.__prior.get_mean()) @ self.__prior_prec + self.__likelihood.grad(x)

    def _hess(self, x: np.ndarray) -> np.ndarray:
        hess: np.ndarray = gaussian_core.symmetrize(-self.__prior_prec + self.__likelihood.hess())
        return np.broadcast_to(hess, (x.shape[0],) + hess.shape).copy()

    def log_evidence(self) -> float:
        """
        Gets the closed-form log marginal likelihood log p(z).
        """
        predictive: gaussian_core.GaussianParams = self.__likelihood.predictive(self.__prior)
        return gaussian_core.gaussian_logpdf(self.get_observation(), predictive)


def kalman_posterior(m: LinearGaussianModel) -> gaussian_core.GaussianParams:
    """
    Computes the conjugate posterior of a linear Gaussian model.

    The mean uses the gain form x̂ + PHᵀ(R + HPHᵀ)⁻¹(z − Hx̂); the covariance is the inverse of
    P⁻¹ + HᵀR⁻¹H.

    Args:
        m (LinearGaussianModel): The model.

    Returns:
        gaussian_core.GaussianParams: The posterior.
    """
    prior: gaussian_core.GaussianParams = m.get_prior()
    obs_matrix: np.ndarray = m.get_obs_matrix()
    innovation_cov: np.ndarray = gaussian_core.symmetrize(m.get_obs_cov() + obs_matrix @ prior.get_cov() @ obs_matrix.T)
    innovation_chol: np.ndarray = gaussian_core.cholesky_factor(innovation_cov)
    residual: np.ndarray = m.get_observation() - obs_matrix @ prior.get_mean()
    mean: np.ndarray = prior.get_mean() + prior.get_cov() @ obs_matrix.T @ scipy.linalg.cho_solve(
        (innovation_chol, True), residual, check_finite=False)
    prec: np.ndarray = gaussian_core.symmetrize(m.get_prior_prec() + obs_matrix.T @ m.get_obs_prec() @ obs_matrix)
    return gaussian_core.GaussianParams(mean, gaussian_core.spd_inverse(prec))


class MixturePriorLinearModel(TargetModel):
    """
    Gaussian-mixture prior with a linear Gaussian observation.

    Attributes:
        __prior (gaussian_core.MixtureParams): The prior mixture.
        __means, __precs, __prec_chols, __log_weights (np.ndarray): Stacked prior arrays.
        __likelihood (_LinearLikelihood): The observation model.
    """
    def __init__(self, prior: gaussian_core.MixtureParams, obs_matrix: np.ndarray,
                 obs_cov: np.ndarray, z: np.ndarray) -> None:
        super().__init__(prior.get_dim())
        self.__prior: gaussian_core.MixtureParams = prior
        self.__means: np.ndarray = prior.get_means()
        self.__precs: np.ndarray = np.stack([gaussian_core.spd_inverse(c.get_cov()) for c in prior.get_components()])
        self.__prec_chols: np.ndarray = np.stack([gaussian_core.cholesky_factor(prec) for prec in self.__precs])
        self.__log_weights: np.ndarray = prior.get_log_weights()
        self.__likelihood: _LinearLikelihood = _LinearLikelihood(obs_matrix, obs_cov, z, self.get_dim())

    def get_prior(self) -> gaussian_core.MixtureParams:
        return self.__prior

    def get_obs_matrix(self) -> np.ndarray:
        return self.__likelihood.get_obs_matrix()

    def get_obs_cov(self) -> np.ndarray:
        return self.__likelihood.get_obs_cov()

    def get_observation(self) -> np.ndarray:
        return self.__likelihood.get_observation()

    def component_model(self, k: int) -> LinearGaussianModel:
        """
        Gets the linear Gaussian model whose prior is component k.
        """
        component: gaussian_core.GaussianParams = self.__prior.get_components()[k]
        return LinearGaussianModel(component.get_mean(), component.get_cov(), self.get_obs_matrix(),
                                   self.get_obs_cov(), self.get_observation())

    def _log_joint(self, x: np.ndarray) -> np.ndarray:
        terms: np.ndarray = gaussian_core.mixture_log_terms(x, self.__means, self.__prec_chols, self.__log_weights)
        return scipy.special.logsumexp(terms, axis=0) + self.__likelihood.log_likelihood(x)

    def _grad(self, x: np.ndarray) -> np.ndarray:
        _, grad, _ = gaussian_core.mixture_score(x, self.__means, self.__precs, self.__prec_chols, self.__log_weights)
        return grad + self.__likelihood.grad(x)

    def _hess(self, x: np.ndarray) -> np.ndarray:
        _, _, hess = gaussian_core.mixture_score(x, self.__means, self.__precs, self.__prec_chols, self.__log_weights)
        return hess + self.__likelihood.hess()

    def log_evidence(self) -> float:
        """
        Gets log p(z) = log Σ_k π_k N(z; Hx̂_k, R + HP_kHᵀ).
        """
        terms: list[float] = [log_weight + self.component_model(k).log_evidence()
                              for k, log_weight in enumerate(self.__log_weights)]
        return float(scipy.special.logsumexp(terms))


def gmm_posterior_analytic(m: MixturePriorLinearModel) -> gaussian_core.MixtureParams:
    """
    Computes the conjugate posterior mixture of a mixture-prior linear Gaussian model.

    Args:
        m (MixturePriorLinearModel): The model.

    Returns:
        gaussian_core.MixtureParams: Component posteriors with weights ∝ π_k N(z; Hx̂_k, R + HP_kHᵀ).
    """
    prior_log_weights: np.ndarray = m.get_prior().get_log_weights()
    components: list[gaussian_core.GaussianParams] = []
    log_weights: list[float] = []
    for k in range(m.get_prior().get_num_components()):
        component_model: LinearGaussianModel = m.component_model(k)
        components.append(kalman_posterior(component_model))
        log_weights.append(prior_log_weights[k] + component_model.log_evidence())
    log_weights_array: np.ndarray = np.array(log_weights) - scipy.special.logsumexp(log_weights)
    return gaussian_core.MixtureParams(components, log_weights_array - log_weights_array[-1])


class RangeModel(TargetModel):
    """
    Gaussian prior with a scalar range observation z = ||x|| + v, v ~ N(0, R).

    Attributes:
        __prior (gaussian_core.GaussianParams): The prior.
        __prior_prec (np.ndarray): P⁻¹.
        __obs_var (float): R.
        __z (float): Observed range.
    """
    def __init__(self, prior_mean: np.ndarray, prior_cov: np.ndarray, obs_var: float, z: float) -> None:
        self.__prior: gaussian_core.GaussianParams = gaussian_core.GaussianParams(prior_mean, prior_cov)
        super().__init__(self.__prior.get_dim())
        if obs_var <= 0.0:
            raise ValueError(f"'{obs_var}'. Observation variance must be positive.")
        self.__prior_prec: np.ndarray = gaussian_core.spd_inverse(self.__prior.get_cov())
        self.__obs_var: float = float(obs_var)
        self.__z: float = float(z)

    def get_prior(self) -> gaussian_core.GaussianParams:
        return self.__prior

    def get_obs_var(self) -> float:
        return self.__obs_var

    def get_observation(self) -> float:
        return self.__z

    def __ranges(self, x: np.ndarray) -> np.ndarray:
        ranges: np.ndarray = np.linalg.norm(x, axis=1)
        if np.any(ranges < SINGULAR_RADIUS):
            raise errors.SingularPoint("Range derivatives are undefined at the origin.")
        return ranges

    def _log_joint(self, x: np.ndarray) -> np.ndarray:
        residual: np.ndarray = self.__z - np.linalg.norm(x, axis=1)
        log_likelihood: np.ndarray = -0.5 * (np.log(2.0 * np.pi * self.__obs_var) + residual ** 2 / self.__obs_var)
        return gaussian_core.gaussian_logpdf(x, self.__prior) + log_likelihood

    def _grad(self, x: np.ndarray) -> np.ndarray:
        ranges: np.ndarray = self.__ranges(x)
        scale: np.ndarray = (self.__z - ranges) / (self.__obs_var * ranges)
        return -(x - self.__prior.get_mean()) @ self.__prior_prec + scale[:, None] * x

    def _hess(self, x: np.ndarray) -> np.ndarray:
        ranges: np.ndarray = self.__ranges(x)
        directions: np.ndarray = x / ranges[:, None]
        outer: np.ndarray = np.einsum("mi,mj->mij", directions, directions)
        identity: np.ndarray = np.eye(self.get_dim())
        residual: np.ndarray = (self.__z - ranges)[:, None, None]
        range_hess: np.ndarray = (identity[None] - outer) / ranges[:, None, None]
        return gaussian_core.symmetrize(-self.__prior_prec[None] + (-outer + residual * range_hess) / self.__obs_var)


class LogisticRegressionModel(TargetModel):
    """
    Unnormalised posterior of Bayesian logistic regression with an uninformative prior.

    log p(x) = Σ_i z_i log σ(y_iᵀx) + (1 − z_i) log(1 − σ(y_iᵀx)).

    Attributes:
        __features (np.ndarray): Features y_i (N, n).
        __labels (np.ndarray): Binary labels z_i (N,).
        __true_weights (np.ndarray | None): Weights the data were generated from, if known.
    """
    def __init__(self, features: np.ndarray, labels: np.ndarray, true_weights: np.ndarray | None = None) -> None:
        self.__features: np.ndarray = np.array(features, dtype=float, ndmin=2)
        super().__init__(self.__features.shape[1])
        self.__labels: np.ndarray = np.array(labels, dtype=float).reshape(-1)
        if self.__labels.shape[0] != self.__features.shape[0]:
            raise errors.DimensionMismatch("Features and labels must have the same number of rows.")
        if not np.all((self.__labels == 0.0) | (self.__labels == 1.0)):
            raise ValueError("Labels must be 0 or 1.")
        self.__true_weights: np.ndarray | None = None if true_weights is None else np.array(true_weights, dtype=float)

    def get_features(self) -> np.ndarray:
        return self.__features

    def get_labels(self) -> np.ndarray:
        return self.__labels

    def get_true_weights(self) -> np.ndarray | None:
        return self.__true_weights

    def _log_joint(self, x: np.ndarray) -> np.ndarray:
        logits: np.ndarray = x @ self.__features.T
        return np.sum(self.__labels * logits - np.logaddexp(0.0, logits), axis=1)

    def _grad(self, x: np.ndarray) -> np.ndarray:
        probs: np.ndarray = scipy.special.expit(x @ self.__features.T)
        return (self.__labels - probs) @ self.__features

    def _hess(self, x: np.ndarray) -> np.ndarray:
        probs: np.ndarray = scipy.special.expit(x @ self.__features.T)
        curvature: np.ndarray = probs * (1.0 - probs)
        return -np.einsum("mi,ij,ik->mjk", curvature, self.__features, self.__features)

    def _weighted_hess(self, x: np.ndarray, weights: np.ndarray) -> np.ndarray:
        probs: np.ndarray = scipy.special.expit(x @ self.__features.T)
        curvature: np.ndarray = weights @ (probs * (1.0 - probs))
        return -(self.__features.T * curvature) @ self.__features

    def to_csv(self, path: str | Path) -> None:
        """
        Writes the dataset with header y_1,...,y_n,z and 17 significant digits.

        Args:
            path (str | Path): Output file.
        """
        header: str = ",".join([f"y_{i + 1}" for i in range(self.get_dim())] + ["z"])
        rows: np.ndarray = np.column_stack([self.__features, self.__labels])
        np.savetxt(path, rows, fmt="%.17g", delimiter=",", header=header, comments="")

    @classmethod
    def from_csv(cls, path: str | Path) -> "LogisticRegressionModel":
        """
        Reads a dataset written by to_csv.
        """
        rows: np.ndarray = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(rows[:, :-1], rows[:, -1])


def generate_logreg_dataset(n: int, N: int, seed: int) -> LogisticRegressionModel:
    """
    Generates a synthetic two-class dataset.

    Draws x* ~ N(0, I), features y_i ~ N(0, I) and labels z_i ~ Bernoulli(σ(y_iᵀx*)).

    Args:
        n (int): Dimension.
        N (int): Number of data, at least 1.
        seed (int): Generator seed.

    Returns:
        LogisticRegressionModel: The model, remembering x*.
    """
    if N < 1:
        raise ValueError(f"'{N}'. Number of data must be a positive integer.")
    rng: np.random.Generator = np.random.default_rng(seed)
    true_weights: np.ndarray = rng.standard_normal(n)
    features: np.ndarray = rng.standard_normal((N, n))
    labels: np.ndarray = (rng.random(N) < scipy.special.expit(features @ true_weights)).astype(float)
    LOGGER.debug("Generated logistic dataset n=%d N=%d positives=%d", n, N, int(labels.sum()))
    return LogisticRegressionModel(features, labels, true_weights)


class FunnelModel(TargetModel):
    """
    Funnel density p(x) = N(x₁; 0, 9) Π_{i≥2} N(x_i; 0, e^{x₁}).

    The variance e^{x₁} only enters through e^{−x₁}, so large x₁ cannot overflow.
    """
    def __init__(self, dim: int = 30, scale: float = 3.0) -> None:
        if dim < 2:
            raise ValueError(f"'{dim}'. Funnel dimension must be at least 2.")
        super().__init__(dim)
        self.__scale: float = float(scale)

    def _log_joint(self, x: np.ndarray) -> np.ndarray:
        neck: np.ndarray = x[:, 0]
        tail: np.ndarray = np.sum(x[:, 1:] ** 2, axis=1)
        rest: int = self.get_dim() - 1
        return (-0.5 * np.log(2.0 * np.pi * self.__scale ** 2) - neck ** 2 / (2.0 * self.__scale ** 2)
                - 0.5 * rest * (np.log(2.0 * np.pi) + neck) - 0.5 * tail * np.exp(-neck))

    def _grad(self, x: np.ndarray) -> np.ndarray:
        neck: np.ndarray = x[:, 0]
        inv_var: np.ndarray = np.exp(-neck)
        grad: np.ndarray = np.empty_like(x)
        grad[:, 0] = (-neck / self.__scale ** 2 - 0.5 * (self.get_dim() - 1)
                      + 0.5 * inv_var * np.sum(x[:, 1:] ** 2, axis=1))
        grad[:, 1:] = -x[:, 1:] * inv_var[:, None]
        return grad

    def _hess(self, x: np.ndarray) -> np.ndarray:
        neck: np.ndarray = x[:, 0]
        inv_var: np.ndarray = np.exp(-neck)
        hess: np.ndarray = np.zeros((x.shape[0], self.get_dim(), self.get_dim()))
        hess[:, 0, 0] = -1.0 / self.__scale ** 2 - 0.5 * inv_var * np.sum(x[:, 1:] ** 2, axis=1)
        hess[:, 0, 1:] = x[:, 1:] * inv_var[:, None]
        hess[:, 1:, 0] = hess[:, 0, 1:]
        tail_index: np.ndarray = np.arange(1, self.get_dim())
        hess[:, tail_index, tail_index] = -inv_var[:, None]
        return hess

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """
        Draws exact samples.

        Args:
            count (int): Number of samples.
            rng (np.random.Generator): Seeded generator.

        Returns:
            np.ndarray: Samples (count, n).
        """
        neck: np.ndarray = self.__scale * rng.standard_normal(count)
        tail: np.ndarray = rng.standard_normal((count, self.get_dim() - 1)) * np.exp(0.5 * neck)[:, None]
        return np.column_stack([neck, tail])
