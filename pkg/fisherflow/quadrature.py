"""
Gauss-Hermite rules, Monte-Carlo fallback rules, affine particle transport and weighted expectations.

Nodes follow the probabilists' convention: they integrate against the standard normal density.

Imports:
    enum
    itertools
    numpy
    scipy.linalg
    errors: Exception hierarchy of the library.
    workers: Ordered thread-pool map.

Classes:
    RuleKind
    QuadratureRule
    ParticleSet

Functions:
    gh_rule_1d, gh_rule_nd, mc_rule, make_rule, transport, expect
"""

import enum
import itertools
import logging
from collections.abc import Callable

import numpy as np
import scipy.linalg

from fisherflow import errors
from fisherflow import workers

LOGGER = logging.getLogger(__name__)

MAX_DEGREE: int = 64
DEFAULT_NODE_BUDGET: int = 10 ** 6
GH_MAX_DIM: int = 6
MC_PER_DIM: int = 10


class RuleKind(enum.Enum):
    """
    Provenance of a quadrature rule.
    """
    GAUSS_HERMITE = "gauss-hermite"
    MONTE_CARLO = "monte-carlo"


class QuadratureRule:
    """
    Standard-normal quadrature nodes with positive weights summing to 1.

    Attributes:
        __nodes (np.ndarray): Nodes (M, n).
        __weights (np.ndarray): Weights (M,).
        __kind (RuleKind): Gauss-Hermite or Monte-Carlo.
        __degree (int | None): Gauss-Hermite degree p.
        __seed (int | None): Monte-Carlo seed.
    """
    def __init__(self, nodes: np.ndarray, weights: np.ndarray, kind: RuleKind,
                 degree: int | None = None, seed: int | None = None) -> None:
        self.__nodes: np.ndarray = np.array(nodes, dtype=float)
        self.__weights: np.ndarray = np.array(weights, dtype=float)
        if self.__nodes.ndim != 2 or self.__weights.shape != (self.__nodes.shape[0],):
            raise errors.DimensionMismatch("Rule nodes and weights must have matching cardinality.")
        if np.any(self.__weights <= 0.0):
            raise ValueError("Quadrature weights must be strictly positive.")
        self.__nodes.setflags(write=False)
        self.__weights.setflags(write=False)
        self.__kind: RuleKind = kind
        self.__degree: int | None = degree
        self.__seed: int | None = seed

    def get_nodes(self) -> np.ndarray:
        return self.__nodes

    def get_weights(self) -> np.ndarray:
        return self.__weights

    def get_kind(self) -> RuleKind:
        return self.__kind

    def get_degree(self) -> int | None:
        return self.__degree

    def get_seed(self) -> int | None:
        return self.__seed

    def get_dim(self) -> int:
        return self.__nodes.shape[1]

    def get_size(self) -> int:
        return self.__nodes.shape[0]

    def describe(self) -> dict:
        """
        Gets the provenance as a plain dictionary for reports.

        Returns:
            dict: Kind plus degree or seed/count.
        """
        if self.__kind is RuleKind.GAUSS_HERMITE:
            return {"kind": self.__kind.value, "degree": self.__degree, "dim": self.get_dim()}
        return {"kind": self.__kind.value, "seed": self.__seed, "count": self.get_size(), "dim": self.get_dim()}


class ParticleSet:
    """
    A weighted particle ensemble.

    Attributes:
        __positions (np.ndarray): Positions (M, n).
        __weights (np.ndarray): Weights (M,).
    """
    def __init__(self, positions: np.ndarray, weights: np.ndarray) -> None:
        self.__positions: np.ndarray = np.array(positions, dtype=float)
        self.__weights: np.ndarray = np.array(weights, dtype=float)
        if self.__positions.ndim != 2 or self.__weights.shape != (self.__positions.shape[0],):
            raise errors.DimensionMismatch("Particle positions and weights must have matching cardinality.")
        self.__positions.setflags(write=False)
        self.__weights.setflags(write=False)

    def get_positions(self) -> np.ndarray:
        return self.__positions

    def get_weights(self) -> np.ndarray:
        return self.__weights

    def get_size(self) -> int:
        return self.__positions.shape[0]

    def get_dim(self) -> int:
        return self.__positions.shape[1]


def _normalised_hermite(x: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Evaluates He_k(x)/sqrt(k!) for k = degree - 1 and k = degree.

    The normalised recurrence keeps values in range up to degree 64.
    """
    previous: np.ndarray = np.zeros_like(x)
    current: np.ndarray = np.ones_like(x)
    for k in range(degree):
        previous, current = current, (x * current - np.sqrt(k) * previous) / np.sqrt(k + 1)
    return previous, current


def gh_rule_1d(p: int) -> QuadratureRule:
    """
    One-dimensional Gauss-Hermite rule of degree p.

    Nodes are the roots of the probabilists' Hermite polynomial He_p, found from the Jacobi
    matrix eigenproblem and polished with one Newton step. Weights are p!/(p He_{p-1}(ξ))².

    Args:
        p (int): Degree, 1 ≤ p ≤ 64.

    Returns:
        QuadratureRule: The rule with nodes of shape (p, 1).

    Raises:
        DegreeOutOfRange: If p is outside [1, 64].
    """
    if not isinstance(p, (int, np.integer)) or p < 1 or p > MAX_DEGREE:
        raise errors.DegreeOutOfRange(f"'{p}'. Gauss-Hermite degree must be an integer between 1 and {MAX_DEGREE}.")
    p = int(p)
    if p == 1:
        return QuadratureRule(np.zeros((1, 1)), np.ones(1), RuleKind.GAUSS_HERMITE, degree=1)

    off_diagonal: np.ndarray = np.sqrt(np.arange(1, p, dtype=float))
    nodes: np.ndarray = scipy.linalg.eigh_tridiagonal(np.zeros(p), off_diagonal, eigvals_only=True)
    nodes = np.sort(nodes)

    # Newton polish: He_p / He_p' = h_p / (sqrt(p) h_{p-1}) in normalised form
    lower, upper = _normalised_hermite(nodes, p)
    nodes = nodes - upper / (np.sqrt(p) * lower)
    nodes = 0.5 * (nodes - nodes[::-1])
    if p % 2 == 1:
        nodes[p // 2] = 0.0

    lower, _ = _normalised_hermite(nodes, p)
    weights: np.ndarray = 1.0 / (p * lower ** 2)
    weights = 0.5 * (weights + weights[::-1])
    weights = weights / np.sum(weights)
    return QuadratureRule(nodes.reshape(-1, 1), weights, RuleKind.GAUSS_HERMITE, degree=p)


def gh_rule_nd(p: int, n: int, node_budget: int = DEFAULT_NODE_BUDGET) -> QuadratureRule:
    """
    Tensor-product Gauss-Hermite rule in n dimensions.

    Args:
        p (int): Degree per dimension.
        n (int): Dimension.
        node_budget (int): Largest admissible p^n. Defaults to 10^6.

    Returns:
        QuadratureRule: Rule with p^n nodes in row-major order.

    Raises:
        NodeBudgetExceeded: If p^n exceeds the budget.
    """
    if n < 1:
        raise ValueError(f"'{n}'. Dimension must be a positive integer.")
    rule_1d: QuadratureRule = gh_rule_1d(p)
    if p ** n > node_budget:
        raise errors.NodeBudgetExceeded(f"'{p}^{n}'. Tensor rule exceeds the node budget of {node_budget}.")
    nodes_1d: np.ndarray = rule_1d.get_nodes()[:, 0]
    weights_1d: np.ndarray = rule_1d.get_weights()
    indices: np.ndarray = np.array(list(itertools.product(range(p), repeat=n)), dtype=int).reshape(-1, n)
    nodes: np.ndarray = nodes_1d[indices]
    weights: np.ndarray = np.prod(weights_1d[indices], axis=1)
    return QuadratureRule(nodes, weights / np.sum(weights), RuleKind.GAUSS_HERMITE, degree=p)


def mc_rule(n: int, count: int, seed: int) -> QuadratureRule:
    """
    Monte-Carlo rule of standard-normal draws with uniform weights.

    Args:
        n (int): Dimension.
        count (int): Number of draws, at least 2.
        seed (int): Generator seed.

    Returns:
        QuadratureRule: The rule.
    """
    if count < 2:
        raise ValueError(f"'{count}'. Monte-Carlo count must be at least 2.")
    rng: np.random.Generator = np.random.default_rng(seed)
    nodes: np.ndarray = rng.standard_normal((count, n))
    return QuadratureRule(nodes, np.full(count, 1.0 / count), RuleKind.MONTE_CARLO, seed=seed)


def make_rule(n: int, degree: int, seed: int, mc_count: int | None = None,
              node_budget: int = DEFAULT_NODE_BUDGET) -> QuadratureRule:
    """
    Chooses a Gauss-Hermite rule up to dimension 6 within the node budget, Monte-Carlo otherwise.

    Args:
        n (int): Dimension.
        degree (int): Gauss-Hermite degree.
        seed (int): Seed used if the Monte-Carlo fallback is taken.
        mc_count (int | None): Monte-Carlo count. Defaults to 10n.
        node_budget (int): Largest admissible tensor rule.

    Returns:
        QuadratureRule: The chosen rule.
    """
    if n <= GH_MAX_DIM and degree ** n <= node_budget:
        return gh_rule_nd(degree, n, node_budget)
    count: int = mc_count if mc_count is not None else MC_PER_DIM * n
    LOGGER.info("Using Monte-Carlo rule with %d nodes in dimension %d", count, n)
    return mc_rule(n, count, seed)


def transport(rule: QuadratureRule, mean: np.ndarray, sqrt: np.ndarray) -> ParticleSet:
    """
    Maps rule nodes through x = Lξ + μ.

    Args:
        rule (QuadratureRule): Standard-normal rule.
        mean (np.ndarray): Mean μ (n,).
        sqrt (np.ndarray): Square root L (n x n).

    Returns:
        ParticleSet: Transported particles with the rule's weights.
    """
    mean = np.asarray(mean, dtype=float)
    sqrt = np.asarray(sqrt, dtype=float)
    n: int = rule.get_dim()
    if mean.shape != (n,) or sqrt.shape != (n, n):
        raise errors.DimensionMismatch(f"'{mean.shape}', '{sqrt.shape}'. Transport needs a mean of size {n}.")
    return ParticleSet(rule.get_nodes() @ sqrt.T + mean, rule.get_weights())


def expect(ps: ParticleSet, f: Callable, vectorized: bool = False):
    """
    Weighted particle average Σ_i w_i f(x_i).

    Args:
        ps (ParticleSet): The particles.
        f (Callable): Function of one position, or of the whole (M, n) array if vectorized.
        vectorized (bool): Whether f accepts the stacked positions. Defaults to False.

    Returns:
        The weighted average, scalar, vector or matrix as f dictates.

    Raises:
        NonFiniteValue: If any evaluation is not finite.
    """
    positions: np.ndarray = ps.get_positions()
    if vectorized:
        values: np.ndarray = np.asarray(f(positions), dtype=float)
    else:
        values = np.asarray(workers.ordered_map(f, positions), dtype=float)
    if not np.all(np.isfinite(values)):
        raise errors.NonFiniteValue("Expectation integrand is not finite at some particle.")
    result = np.tensordot(ps.get_weights(), values, axes=1)
    return float(result) if np.ndim(result) == 0 else result
