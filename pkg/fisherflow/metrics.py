"""
KL and ELBO estimators, evaluation grids and mode coverage.

Two grid KL estimators ship. paper_kl_estimate averages log-ratios uniformly over the grid and
normalises with the unscaled sum of the joint; importance_kl_estimate weights by q and includes the
cell volume, so it converges to the true KL as the grid refines.

Imports:
    numpy
    scipy.special
    errors: Exception hierarchy of the library.
    gaussian_core: Gaussian parameterisations and densities.
    quadrature: Particle sets.
    workers: Ordered thread-pool map.

Classes:
    EvalGrid

Functions:
    paper_kl_estimate, importance_kl_estimate, elbo_estimate, mode_coverage, moving_average, relative_gap
"""

import logging
from collections.abc import Callable, Sequence

import numpy as np
import scipy.special

from fisherflow import errors
from fisherflow import gaussian_core
from fisherflow import quadrature
from fisherflow import workers

LOGGER = logging.getLogger(__name__)

CHUNK_SIZE: int = 65536
SMOOTHING_WINDOW: int = 5

LogDensity = Callable[[np.ndarray], np.ndarray]


class EvalGrid:
    """
    Rectangular grid of cell centres in row-major order.

    Attributes:
        __bounds (tuple[tuple[float, float], ...]): (low, high) per dimension.
        __resolution (tuple[int, ...]): Cells per dimension.
        __points (np.ndarray): Cell centres (prod(resolution), n).
        __cell_volume (float): Volume of one cell.
    """
    def __init__(self, bounds: Sequence[tuple[float, float]], resolution: Sequence[int]) -> None:
        if len(bounds) != len(resolution) or not bounds:
            raise errors.DimensionMismatch("Grid bounds and resolution must have the same positive length.")
        for (low, high), count in zip(bounds, resolution):
            if not high > low:
                raise ValueError(f"'{(low, high)}'. Grid bounds must satisfy low < high.")
            if count < 1:
                raise ValueError(f"'{count}'. Grid resolution must be a positive integer.")
        self.__bounds: tuple[tuple[float, float], ...] = tuple((float(low), float(high)) for low, high in bounds)
        self.__resolution: tuple[int, ...] = tuple(int(count) for count in resolution)
        spacings: list[float] = [(high - low) / count for (low, high), count in zip(self.__bounds, self.__resolution)]
        axes: list[np.ndarray] = [low + (np.arange(count) + 0.5) * step
                                  for (low, _), count, step in zip(self.__bounds, self.__resolution, spacings)]
        mesh: list[np.ndarray] = np.meshgrid(*axes, indexing="ij")
        self.__points: np.ndarray = np.stack([axis.reshape(-1) for axis in mesh], axis=1)
        self.__points.setflags(write=False)
        self.__cell_volume: float = float(np.prod(spacings))

    @classmethod
    def around(cls, g: gaussian_core.GaussianParams, resolution: int, width: float = 6.0) -> "EvalGrid":
        """
        A square grid covering ±width standard deviations of a Gaussian along each axis.
        """
        deviations: np.ndarray = np.sqrt(np.diag(g.get_cov()))
        bounds: list[tuple[float, float]] = [(m - width * s, m + width * s) for m, s in zip(g.get_mean(), deviations)]
        return cls(bounds, [resolution] * g.get_dim())

    def get_bounds(self) -> tuple[tuple[float, float], ...]:
        return self.__bounds

    def get_resolution(self) -> tuple[int, ...]:
        return self.__resolution

    def get_points(self) -> np.ndarray:
        return self.__points

    def get_cell_volume(self) -> float:
        return self.__cell_volume

    def get_size(self) -> int:
        return self.__points.shape[0]


def evaluate(log_density: LogDensity, points: np.ndarray) -> np.ndarray:
    """
    Evaluates a log density over many points in ordered chunks.

    Raises:
        NonFiniteValue: If any value is not finite.
    """
    chunks: list[np.ndarray] = [points[start:start + CHUNK_SIZE] for start in range(0, points.shape[0], CHUNK_SIZE)]
    values: np.ndarray = np.concatenate([np.atleast_1d(np.asarray(part, dtype=float))
                                         for part in workers.ordered_map(log_density, chunks)])
    if not np.all(np.isfinite(values)):
        raise errors.NonFiniteValue("Log density is not finite at some evaluation point.")
    return values


def paper_kl_estimate(q_logpdf: LogDensity, joint_logpdf: LogDensity, points: np.ndarray) -> float:
    """
    Discrete KL (1/N)Σ_i log(q(x_i)/p(x_i, z)) + (1/N) log Σ_j p(x_j, z).

    Args:
        q_logpdf (LogDensity): Variational log density.
        joint_logpdf (LogDensity): log p(x, z).
        points (np.ndarray): Evaluation points (N, n).

    Returns:
        float: The estimate.
    """
    points = np.atleast_2d(points)
    log_q: np.ndarray = evaluate(q_logpdf, points)
    log_p: np.ndarray = evaluate(joint_logpdf, points)
    count: int = points.shape[0]
    return float(np.mean(log_q - log_p) + scipy.special.logsumexp(log_p) / count)


def importance_kl_estimate(q_logpdf: LogDensity, joint_logpdf: LogDensity, grid: EvalGrid) -> float:
    """
    Volume-corrected KL Σ_i q(x_i)·vol·log(q(x_i)/p(x_i | z)) with p(z) ≈ Σ_j p(x_j, z)·vol.

    Args:
        q_logpdf (LogDensity): Variational log density.
        joint_logpdf (LogDensity): log p(x, z).
        grid (EvalGrid): Grid covering the effective support.

    Returns:
        float: The estimate.
    """
    points: np.ndarray = grid.get_points()
    log_q: np.ndarray = evaluate(q_logpdf, points)
    log_p: np.ndarray = evaluate(joint_logpdf, points)
    log_volume: float = float(np.log(grid.get_cell_volume()))
    log_evidence: float = float(scipy.special.logsumexp(log_p) + log_volume)
    mass: np.ndarray = np.exp(log_q + log_volume)
    return float(mass @ (log_q - (log_p - log_evidence)))


def elbo_estimate(particles: quadrature.ParticleSet, q_logpdf: LogDensity, joint_logpdf: LogDensity) -> float:
    """
    Evidence lower bound Σ_i w_i log(p(x_i, z)/q(x_i)); uniform weights give the (1/N) average.
    """
    positions: np.ndarray = particles.get_positions()
    log_ratio: np.ndarray = evaluate(joint_logpdf, positions) - evaluate(q_logpdf, positions)
    return float(particles.get_weights() @ log_ratio)


def mode_coverage(approx: gaussian_core.MixtureParams, reference: gaussian_core.MixtureParams,
                  radius: float) -> np.ndarray:
    """
    Whether each reference mode has an approximating component mean within a Mahalanobis radius.

    Distances are taken under the reference mode's covariance and compared as sqrt(D_M) ≤ radius.

    Args:
        approx (gaussian_core.MixtureParams): Approximation.
        reference (gaussian_core.MixtureParams): Reference mixture.
        radius (float): Radius in Mahalanobis units.

    Returns:
        np.ndarray: One boolean per reference component.
    """
    if approx.get_dim() != reference.get_dim():
        raise errors.DimensionMismatch("Mixtures must share one dimension.")
    covered: list[bool] = []
    for mode in reference.get_components():
        prec: np.ndarray = gaussian_core.spd_inverse(mode.get_cov())
        distances: np.ndarray = np.atleast_1d(gaussian_core.mahalanobis(approx.get_means(), mode.get_mean(), prec))
        covered.append(bool(np.any(np.sqrt(distances) <= radius)))
    return np.array(covered)


def moving_average(times: Sequence[float], values: Sequence[float],
                   window: int = SMOOTHING_WINDOW) -> tuple[np.ndarray, np.ndarray]:
    """
    Centred moving average of a recorded series.

    Only full windows are kept, so a series of length L gives L − window + 1 points, each placed at
    the time of its window centre.

    Args:
        times (Sequence[float]): Record times.
        values (Sequence[float]): Recorded values.
        window (int): Odd window length. Defaults to 5.

    Returns:
        tuple[np.ndarray, np.ndarray]: Centre times and averaged values; empty when the series is shorter
        than the window.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"'{window}'. Window must be a positive odd integer.")
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.shape != values.shape:
        raise errors.DimensionMismatch("Times and values must have the same length.")
    if values.shape[0] < window:
        return np.empty(0), np.empty(0)
    half: int = window // 2
    averaged: np.ndarray = np.convolve(values, np.full(window, 1.0 / window), mode="valid")
    return times[half:values.shape[0] - half], averaged


def relative_gap(reference: float, other: float) -> float:
    """
    |reference − other| / |reference|.
    """
    if reference == 0.0:
        raise ValueError("Reference value must be non-zero.")
    return abs(reference - other) / abs(reference)
