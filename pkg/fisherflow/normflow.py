"""
Invertible transformations, the transformed joint density and the particle-flow-based normalizing flow.

The variational density is the pushforward of a Gaussian or Gaussian-mixture base b(u; θ_u) through
x = F(u; θ_F). The base follows its Fisher-Rao flow against the transformed joint
    log p̃(u) = log p(F(u), z) + log|det ∇F(u)|,
and the transformation parameters follow the scaled particle-averaged gradient
    dθ_F/dt = γ Σ_i w_i ∇_θ log p̃(u_i).

Transformation gradients are analytic per family. Each family exposes Jacobian-vector products
in both the input and the parameters so the chain can run forward and adjoint passes.

Imports:
    json
    numpy
    scipy.special
    errors: Exception hierarchy of the library.
    fr_gaussian: Gaussian Fisher-Rao flow.
    fr_mixture: Mixture Fisher-Rao flow.
    gaussian_core: Gaussian parameterisations and densities.
    integrator: ODE integration of flat states.
    quadrature: Rules, transport and expectations.
    targets: Target models.

Classes:
    Transform
    PlanarTransform
    RadialTransform
    TriangularTransform
    TransformChain
    TransformedTarget
    JointFlowState

Functions:
    forward, transformed_log_joint, joint_param_rhs, particle_kl, transformed_velocity, integrate_nf
"""

import json
import logging
from collections.abc import Callable, Sequence

import numpy as np
import scipy.special

from fisherflow import errors
from fisherflow import fr_gaussian
from fisherflow import fr_mixture
from fisherflow import gaussian_core
from fisherflow import integrator
from fisherflow import quadrature
from fisherflow import targets

LOGGER = logging.getLogger(__name__)

# Shift so that the planar margin map m(a) = softplus(a + SHIFT) − 1 has m(0) = 0
PLANAR_SHIFT: float = float(np.log(np.e - 1.0))
MIN_NORM_SQ: float = 1e-12


def _softplus(x):
    return np.logaddexp(0.0, x)


def _softplus_inverse(y: float) -> float:
    if y <= 0.0:
        raise ValueError(f"'{y}'. Softplus inverse needs a positive value.")
    return float(y + np.log(-np.expm1(-y)))


class Transform:
    """
    Base class for one invertible map F_j(u; θ_j) acting on batches (M, n).

    Subclasses are immutable; with_params returns a new map.
    """
    kind: str = ""

    def get_dim(self) -> int:
        raise NotImplementedError

    def get_params(self) -> np.ndarray:
        raise NotImplementedError

    def get_num_params(self) -> int:
        return self.get_params().shape[0]

    def with_params(self, theta: np.ndarray) -> "Transform":
        raise NotImplementedError

    def forward(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """
        Maps a batch and returns (x (M, n), log|det ∇F| (M,)).
        """
        raise NotImplementedError

    def jvp_x(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def vjp_x(self, u: np.ndarray, a: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jvp_params(self, u: np.ndarray, d_theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def vjp_params(self, u: np.ndarray, a: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad_logdet_x(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad_logdet_params(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def is_invertible(self) -> bool:
        return bool(np.all(np.isfinite(self.get_params())))

    def to_dict(self) -> dict:
        raise NotImplementedError

    def jacobian(self, u: np.ndarray) -> np.ndarray:
        """
        Dense Jacobians (M, n, n) assembled from input Jacobian-vector products.
        """
        u = np.atleast_2d(u)
        basis: np.ndarray = np.eye(self.get_dim())
        columns: list[np.ndarray] = [self.jvp_x(u, np.broadcast_to(e, u.shape)) for e in basis]
        return np.stack(columns, axis=2)


class PlanarTransform(Transform):
    """
    Planar map x = u + ŷ tanh(wᵀu + b).

    The raw direction y is replaced by ŷ = y + (m(wᵀy) − wᵀy) w/‖w‖², where m(a) = softplus(a + ln(e − 1)) − 1,
    so wᵀŷ = m(wᵀy) > −1 always holds and y = 0 gives the identity.

    Attributes:
        __y (np.ndarray): Raw direction (n,).
        __w (np.ndarray): Normal (n,).
        __b (float): Offset.
    """
    kind: str = "planar"

    def __init__(self, y: np.ndarray, w: np.ndarray, b: float) -> None:
        self.__y: np.ndarray = np.array(y, dtype=float).reshape(-1)
        self.__w: np.ndarray = np.array(w, dtype=float).reshape(-1)
        self.__b: float = float(b)
        if self.__y.shape != self.__w.shape:
            raise errors.DimensionMismatch("Planar y and w must have the same length.")

    @classmethod
    def identity(cls, n: int, rng: np.random.Generator | None = None, scale: float = 0.1) -> "PlanarTransform":
        """
        An identity planar map, y = 0, with w drawn at the given scale (unit first axis without rng).
        """
        w: np.ndarray = scale * rng.standard_normal(n) if rng is not None else np.eye(n)[0]
        return cls(np.zeros(n), w, 0.0)

    def get_dim(self) -> int:
        return self.__y.shape[0]

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.__y, self.__w, [self.__b]])

    def with_params(self, theta: np.ndarray) -> "PlanarTransform":
        n: int = self.get_dim()
        return PlanarTransform(theta[:n], theta[n:2 * n], theta[2 * n])

    def __margin(self) -> tuple[float, float, float]:
        """
        Gets (s, m(s), m'(s)) with s = wᵀy.
        """
        s: float = float(self.__w @ self.__y)
        return s, float(_softplus(s + PLANAR_SHIFT) - 1.0), float(scipy.special.expit(s + PLANAR_SHIFT))

    def __norm_sq(self) -> float:
        return float(self.__w @ self.__w)

    def __correction(self) -> tuple[float, np.ndarray, np.ndarray]:
        """
        Gets c with ŷ = y + cw, and its gradients with respect to y and w.
        """
        norm_sq: float = self.__norm_sq()
        if norm_sq < MIN_NORM_SQ:
            zeros: np.ndarray = np.zeros(self.get_dim())
            return 0.0, zeros, zeros
        s, m, dm = self.__margin()
        c: float = (m - s) / norm_sq
        dc_dy: np.ndarray = (dm - 1.0) * self.__w / norm_sq
        dc_dw: np.ndarray = (dm - 1.0) * self.__y / norm_sq - 2.0 * c * self.__w / norm_sq
        return c, dc_dy, dc_dw

    def get_direction(self) -> np.ndarray:
        """
        Gets the constrained direction ŷ.
        """
        return self.__y + self.__correction()[0] * self.__w

    def __activation(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        a: np.ndarray = u @ self.__w + self.__b
        tanh: np.ndarray = np.tanh(a)
        slope: np.ndarray = 1.0 - tanh ** 2
        return tanh, slope, -2.0 * tanh * slope

    def __logdet_parts(self, slope: np.ndarray) -> tuple[float, np.ndarray]:
        margin: float = float(self.__w @ self.get_direction())
        return margin, 1.0 + slope * margin

    def forward(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        tanh, slope, _ = self.__activation(u)
        _, det = self.__logdet_parts(slope)
        return u + tanh[:, None] * self.get_direction(), np.log(det)

    def jvp_x(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        _, slope, _ = self.__activation(u)
        return v + (slope * (v @ self.__w))[:, None] * self.get_direction()

    def vjp_x(self, u: np.ndarray, a: np.ndarray) -> np.ndarray:
        _, slope, _ = self.__activation(u)
        return a + (slope * (a @ self.get_direction()))[:, None] * self.__w

    def jvp_params(self, u: np.ndarray, d_theta: np.ndarray) -> np.ndarray:
        n: int = self.get_dim()
        dy, dw, db = d_theta[:n], d_theta[n:2 * n], d_theta[2 * n]
        c, dc_dy, dc_dw = self.__correction()
        d_direction: np.ndarray = dy + (dc_dy @ dy + dc_dw @ dw) * self.__w + c * dw
        tanh, slope, _ = self.__activation(u)
        da: np.ndarray = u @ dw + db
        return tanh[:, None] * d_direction + (slope * da)[:, None] * self.get_direction()

    def vjp_params(self, u: np.ndarray, a: np.ndarray) -> np.ndarray:
        c, dc_dy, dc_dw = self.__correction()
        tanh, slope, _ = self.__activation(u)
        direction: np.ndarray = self.get_direction()
        along: np.ndarray = a @ direction
        along_w: np.ndarray = a @ self.__w
        # Gradients of aᵀŷ, scaled by tanh
        grad_y: np.ndarray = tanh[:, None] * (a + along_w[:, None] * dc_dy)
        grad_w: np.ndarray = tanh[:, None] * (c * a + along_w[:, None] * dc_dw) + (slope * along)[:, None] * u
        grad_b: np.ndarray = slope * along
        return np.concatenate([grad_y, grad_w, grad_b[:, None]], axis=1)

    def grad_logdet_x(self, u: np.ndarray) -> np.ndarray:
        _, slope, curvature = self.__activation(u)
        margin, det = self.__logdet_parts(slope)
        return (curvature * margin / det)[:, None] * self.__w

    def grad_logdet_params(self, u: np.ndarray) -> np.ndarray:
        _, slope, curvature = self.__activation(u)
        margin, det = self.__logdet_parts(slope)
        if self.__norm_sq() < MIN_NORM_SQ:
            d_margin_dy, d_margin_dw = self.__w, self.__y
        else:
            _, _, dm = self.__margin()
            d_margin_dy, d_margin_dw = dm * self.__w, dm * self.__y
        grad_y: np.ndarray = (slope / det)[:, None] * d_margin_dy
        grad_w: np.ndarray = (curvature * margin / det)[:, None] * u + (slope / det)[:, None] * d_margin_dw
        grad_b: np.ndarray = curvature * margin / det
        return np.concatenate([grad_y, grad_w, grad_b[:, None]], axis=1)

    def is_invertible(self) -> bool:
        return super().is_invertible() and float(self.__w @ self.get_direction()) > -1.0

    def to_dict(self) -> dict:
        return {"type": self.kind, "params": {"b": self.__b, "w": self.__w.tolist(), "y": self.__y.tolist()}}


class RadialTransform(Transform):
    """
    Radial map x = u + βh(r)(u − u₀), h(r) = 1/(α + r), r = ‖u − u₀‖.

    Raw parameters are (u₀, α̂, β̂) with α = softplus(α̂) and β = −α + softplus(β̂), so α > 0 and β > −α.

    Attributes:
        __centre (np.ndarray): u₀ (n,).
        __alpha (float): α.
        __beta (float): β.
    """
    kind: str = "radial"

    def __init__(self, u0: np.ndarray, alpha: float, beta: float) -> None:
        if alpha <= 0.0:
            raise ValueError(f"'{alpha}'. Radial alpha must be positive.")
        if beta <= -alpha:
            raise ValueError(f"'{beta}'. Radial beta must be greater than -alpha.")
        self.__centre: np.ndarray = np.array(u0, dtype=float).reshape(-1)
        self.__alpha: float = float(alpha)
        self.__beta: float = float(beta)

    @classmethod
    def identity(cls, n: int, rng: np.random.Generator | None = None, alpha: float = 1.0) -> "RadialTransform":
        centre: np.ndarray = rng.standard_normal(n) if rng is not None else np.zeros(n)
        return cls(centre, alpha, 0.0)

    def get_dim(self) -> int:
        return self.__centre.shape[0]

    def get_alpha(self) -> float:
        return self.__alpha

    def get_beta(self) -> float:
        return self.__beta

    def __raw(self) -> tuple[float, float]:
        return _softplus_inverse(self.__alpha), _softplus_inverse(self.__beta + self.__alpha)

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.__centre, self.__raw()])

    def with_params(self, theta: np.ndarray) -> "RadialTransform":
        n: int = self.get_dim()
        alpha: float = float(_softplus(theta[n]))
        return RadialTransform(theta[:n], alpha, float(-alpha + _softplus(theta[n + 1])))

    def __geometry(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """
        Gets (d, r, unit direction, h) per point; the direction is 0 at the centre.
        """
        d: np.ndarray = u - self.__centre
        r: np.ndarray = np.linalg.norm(d, axis=1)
        unit: np.ndarray = np.divide(d, r[:, None], out=np.zeros_like(d), where=r[:, None] > 0.0)
        return d, r, unit, 1.0 / (self.__alpha + r)

    def forward(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        d, _, _, h = self.__geometry(u)
        n: int = self.get_dim()
        logdet: np.ndarray = ((n - 1) * np.log1p(self.__beta * h)
                              + np.log1p(self.__alpha * self.__beta * h ** 2))
        return u + (self.__beta * h)[:, None] * d, logdet

    def jvp_x(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        d, _, unit, h = self.__geometry(u)
        return ((1.0 + self.__beta * h)[:, None] * v
                - (self.__beta * h ** 2 * np.sum(unit * v, axis=1))[:, None] * d)

    def vjp_x(self, u: np.ndarray, a: np.ndarray) -> np.ndarray:
        # Symmetric Jacobian
        return self.jvp_x(u, a)

    def __effective_jvp(self, u: np.ndarray, d_centre: np.ndarray, d_alpha: float, d_beta: float) -> np.ndarray:
        d, _, _, h = self.__geometry(u)
        shift: np.ndarray = -(self.jvp_x(u, np.broadcast_to(d_centre, u.shape)) - d_centre)
        return shift + ((d_beta * h - d_alpha * self.__beta * h ** 2)[:, None]) * d

    def jvp_params(self, u: np.ndarray, d_theta: np.ndarray) -> np.ndarray:
        n: int = self.get_dim()
        alpha_raw, beta_raw = self.__raw()
        d_alpha: float = float(scipy.special.expit(alpha_raw)) * d_theta[n]
        d_beta: float = -d_alpha + float(scipy.special.expit(beta_raw)) * d_theta[n + 1]
        return self.__effective_jvp(u, d_theta[:n], d_alpha, d_beta)

    def __chain_raw(self, grad_centre: np.ndarray, grad_alpha: np.ndarray, grad_beta: np.ndarray) -> np.ndarray:
        alpha_raw, beta_raw = self.__raw()
        grad_alpha_raw: np.ndarray = (grad_alpha - grad_beta) * scipy.special.expit(alpha_raw)
        grad_beta_raw: np.ndarray = grad_beta * scipy.special.expit(beta_raw)
        return np.concatenate([grad_centre, grad_alpha_raw[:, None], grad_beta_raw[:, None]], axis=1)

    def vjp_params(self, u: np.ndarray, a: np.ndarray) -> np.ndarray:
        d, _, _, h = self.__geometry(u)
        along: np.ndarray = np.sum(a * d, axis=1)
        grad_centre: np.ndarray = a - self.vjp_x(u, a)
        return self.__chain_raw(grad_centre, -self.__beta * h ** 2 * along, h * along)

    def __logdet_partials(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """
        Gets the unit direction and ∂/∂r, ∂/∂α, ∂/∂β of the log-determinant.
        """
        _, _, unit, h = self.__geometry(u)
        n: int = self.get_dim()
        alpha, beta = self.__alpha, self.__beta
        radial_det: np.ndarray = 1.0 + beta * h
        cross_det: np.ndarray = 1.0 + alpha * beta * h ** 2
        d_r: np.ndarray = -(n - 1) * beta * h ** 2 / radial_det - 2.0 * alpha * beta * h ** 3 / cross_det
        d_alpha: np.ndarray = -(n - 1) * beta * h ** 2 / radial_det + (beta * h ** 2 - 2.0 * alpha * beta * h ** 3) / cross_det
        d_beta: np.ndarray = (n - 1) * h / radial_det + alpha * h ** 2 / cross_det
        return unit, d_r, d_alpha, d_beta

    def grad_logdet_x(self, u: np.ndarray) -> np.ndarray:
        unit, d_r, _, _ = self.__logdet_partials(u)
        return d_r[:, None] * unit

    def grad_logdet_params(self, u: np.ndarray) -> np.ndarray:
        unit, d_r, d_alpha, d_beta = self.__logdet_partials(u)
        return self.__chain_raw(-d_r[:, None] * unit, d_alpha, d_beta)

    def is_invertible(self) -> bool:
        return super().is_invertible() and self.__alpha > 0.0 and self.__beta > -self.__alpha

    def to_dict(self) -> dict:
        return {"type": self.kind,
                "params": {"alpha": self.__alpha, "beta": self.__beta, "u0": self.__centre.tolist()}}


class TriangularTransform(Transform):
    """
    Triangular map F(u) = Bu + b + exp(Lu + l) ⊙ u with B and L strictly lower triangular.

    The Jacobian is lower triangular with diagonal exp(Lu + l), so log|det ∇F| = Σ_i (Lu + l)_i.

    Attributes:
        __B (np.ndarray): Strictly lower-triangular mixing (n, n).
        __L (np.ndarray): Strictly lower-triangular log-scale mixing (n, n).
        __b (np.ndarray): Shift (n,).
        __l (np.ndarray): Log-scale offset (n,).
    """
    kind: str = "triangular"

    def __init__(self, B: np.ndarray, L: np.ndarray, b: np.ndarray, l: np.ndarray) -> None:
        self.__B: np.ndarray = np.array(B, dtype=float)
        self.__L: np.ndarray = np.array(L, dtype=float)
        self.__b: np.ndarray = np.array(b, dtype=float).reshape(-1)
        self.__l: np.ndarray = np.array(l, dtype=float).reshape(-1)
        n: int = self.__b.shape[0]
        for name, matrix in (("B", self.__B), ("L", self.__L)):
            if matrix.shape != (n, n):
                raise errors.DimensionMismatch(f"'{matrix.shape}'. Triangular {name} must be {n}x{n}.")
            if np.any(np.triu(matrix) != 0.0):
                raise ValueError(f"Triangular {name} must be strictly lower triangular.")
        if self.__l.shape != (n,):
            raise errors.DimensionMismatch(f"'{self.__l.shape}'. Triangular l must have length {n}.")
        self.__rows, self.__cols = np.tril_indices(n, -1)

    @classmethod
    def identity(cls, n: int) -> "TriangularTransform":
        return cls(np.zeros((n, n)), np.zeros((n, n)), np.zeros(n), np.zeros(n))

    def get_dim(self) -> int:
        return self.__b.shape[0]

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.__B[self.__rows, self.__cols], self.__L[self.__rows, self.__cols],
                               self.__b, self.__l])

    def with_params(self, theta: np.ndarray) -> "TriangularTransform":
        n: int = self.get_dim()
        count: int = self.__rows.shape[0]
        B: np.ndarray = np.zeros((n, n))
        L: np.ndarray = np.zeros((n, n))
        B[self.__rows, self.__cols] = theta[:count]
        L[self.__rows, self.__cols] = theta[count:2 * count]
        return TriangularTransform(B, L, theta[2 * count:2 * count + n], theta[2 * count + n:])

    def __scales(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        log_scale: np.ndarray = u @ self.__L.T + self.__l
        with np.errstate(over="ignore"):
            scale: np.ndarray = np.exp(log_scale)
        return log_scale, scale

    def forward(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        log_scale, scale = self.__scales(u)
        return u @ self.__B.T + self.__b + scale * u, np.sum(log_scale, axis=1)

    def inverse(self, x: np.ndarray) -> np.ndarray:
        """
        Solves F(u) = x row by row with forward substitution.

        Args:
            x (np.ndarray): Point (n,) or batch (M, n).

        Returns:
            np.ndarray: u of the same shape.
        """
        batch, single = gaussian_core.as_batch(x, self.get_dim())
        u: np.ndarray = np.zeros_like(batch)
        for i in range(self.get_dim()):
            log_scale: np.ndarray = u[:, :i] @ self.__L[i, :i] + self.__l[i]
            u[:, i] = (batch[:, i] - u[:, :i] @ self.__B[i, :i] - self.__b[i]) * np.exp(-log_scale)
        return u[0] if single else u

    def jvp_x(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        _, scale = self.__scales(u)
        return v @ self.__B.T + scale * u * (v @ self.__L.T) + scale * v

    def vjp_x(self, u: np.ndarray, a: np.ndarray) -> np.ndarray:
        _, scale = self.__scales(u)
        return a @ self.__B + (a * scale * u) @ self.__L + a * scale

    def jvp_params(self, u: np.ndarray, d_theta: np.ndarray) -> np.ndarray:
        step: TriangularTransform = self.with_params(d_theta)
        _, scale = self.__scales(u)
        return u @ step.__B.T + step.__b + scale * u * (u @ step.__L.T + step.__l)

    def vjp_params(self, u: np.ndarray, a: np.ndarray) -> np.ndarray:
        _, scale = self.__scales(u)
        weighted: np.ndarray = a * scale * u
        grad_B: np.ndarray = a[:, self.__rows] * u[:, self.__cols]
        grad_L: np.ndarray = weighted[:, self.__rows] * u[:, self.__cols]
        return np.concatenate([grad_B, grad_L, a, weighted], axis=1)

    def grad_logdet_x(self, u: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.sum(self.__L, axis=0), u.shape).copy()

    def grad_logdet_params(self, u: np.ndarray) -> np.ndarray:
        count: int = self.__rows.shape[0]
        size: int = u.shape[0]
        return np.concatenate([np.zeros((size, count)), u[:, self.__cols], np.zeros((size, self.get_dim())),
                               np.ones((size, self.get_dim()))], axis=1)

    def to_dict(self) -> dict:
        return {"type": self.kind, "params": {"B": self.__B.tolist(), "L": self.__L.tolist(),
                                              "b": self.__b.tolist(), "l": self.__l.tolist()}}


TRANSFORM_TYPES: dict[str, type[Transform]] = {"planar": PlanarTransform, "radial": RadialTransform,
                                               "triangular": TriangularTransform}


class TransformChain:
    """
    Composition F_J ∘ … ∘ F₁, stored in application order.

    Attributes:
        __transforms (tuple[Transform, ...]): The maps.
        __dim (int): Dimension n.
    """
    def __init__(self, transforms: Sequence[Transform], dim: int) -> None:
        self.__transforms: tuple[Transform, ...] = tuple(transforms)
        self.__dim: int = dim
        if any(transform.get_dim() != dim for transform in self.__transforms):
            raise errors.DimensionMismatch(f"All transformations must act on dimension {dim}.")
        self.__sizes: list[int] = [transform.get_num_params() for transform in self.__transforms]

    def get_transforms(self) -> tuple[Transform, ...]:
        return self.__transforms

    def get_dim(self) -> int:
        return self.__dim

    def get_num_params(self) -> int:
        return sum(self.__sizes)

    def get_params(self) -> np.ndarray:
        if not self.__transforms:
            return np.zeros(0)
        return np.concatenate([transform.get_params() for transform in self.__transforms])

    def __split(self, theta: np.ndarray) -> list[np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.get_num_params(),):
            raise errors.DimensionMismatch(f"'{theta.shape}'. Chain parameters must have size {self.get_num_params()}.")
        return np.split(theta, np.cumsum(self.__sizes)[:-1]) if self.__sizes else []

    def with_params(self, theta: np.ndarray) -> "TransformChain":
        pieces: list[np.ndarray] = self.__split(theta)
        return TransformChain([t.with_params(p) for t, p in zip(self.__transforms, pieces)], self.__dim)

    def is_invertible(self) -> bool:
        return all(transform.is_invertible() for transform in self.__transforms)

    def trace(self, u: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """
        Gets the intermediate points u₀ = u, …, u_J = F(u) and the accumulated log-determinant.
        """
        points: list[np.ndarray] = [u]
        logdet: np.ndarray = np.zeros(u.shape[0])
        for transform in self.__transforms:
            x, step_logdet = transform.forward(points[-1])
            points.append(x)
            logdet = logdet + step_logdet
        return points, logdet

    def forward(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        points, logdet = self.trace(u)
        return points[-1], logdet

    def log_joint_grads(self, u: np.ndarray,
                        model: targets.TargetModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Adjoint pass for g(u; θ) = log p(F(u), z) + log|det ∇F(u)|.

        Args:
            u (np.ndarray): Batch (M, n).
            model (targets.TargetModel): The target; must have a gradient.

        Returns:
            tuple[np.ndarray, np.ndarray, np.ndarray]: g (M,), ∇_u g (M, n) and ∇_θ g (M, P).
        """
        points, logdet = self.trace(u)
        value: np.ndarray = np.asarray(model.log_joint(points[-1])) + logdet
        adjoint: np.ndarray = np.asarray(model.grad_log_joint(points[-1]))
        grads: list[np.ndarray] = []
        for index in range(len(self.__transforms) - 1, -1, -1):
            transform: Transform = self.__transforms[index]
            before: np.ndarray = points[index]
            grads.append(transform.vjp_params(before, adjoint) + transform.grad_logdet_params(before))
            adjoint = transform.vjp_x(before, adjoint) + transform.grad_logdet_x(before)
        grad_theta: np.ndarray = np.concatenate(grads[::-1], axis=1) if grads else np.zeros((u.shape[0], 0))
        return value, adjoint, grad_theta

    def jvp_x(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        points, _ = self.trace(u)
        tangent: np.ndarray = np.asarray(v, dtype=float)
        for transform, before in zip(self.__transforms, points):
            tangent = transform.jvp_x(before, tangent)
        return tangent

    def jvp_params(self, u: np.ndarray, d_theta: np.ndarray) -> np.ndarray:
        points, _ = self.trace(u)
        tangent: np.ndarray = np.zeros_like(u)
        for transform, before, piece in zip(self.__transforms, points, self.__split(d_theta)):
            tangent = transform.jvp_x(before, tangent) + transform.jvp_params(before, piece)
        return tangent

    def jacobian(self, u: np.ndarray) -> np.ndarray:
        basis: np.ndarray = np.eye(self.__dim)
        return np.stack([self.jvp_x(u, np.broadcast_to(e, u.shape)) for e in basis], axis=2)

    def to_json(self) -> list[dict]:
        return [transform.to_dict() for transform in self.__transforms]

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def from_json(cls, entries: list[dict], dim: int) -> "TransformChain":
        """
        Rebuilds a chain from its {type, params} list.

        Raises:
            ValueError: On an unknown transformation type.
        """
        transforms: list[Transform] = []
        for entry in entries:
            kind: str = entry.get("type", "")
            if kind not in TRANSFORM_TYPES:
                raise ValueError(f"'{kind}'. Transformation type must be one of {sorted(TRANSFORM_TYPES)}.")
            transforms.append(TRANSFORM_TYPES[kind](**entry["params"]))
        return cls(transforms, dim)

    @classmethod
    def build(cls, kind: str, count: int, dim: int, rng: np.random.Generator | None = None) -> "TransformChain":
        """
        A chain of count identity-initialised maps of one family.
        """
        if kind == "planar":
            return cls([PlanarTransform.identity(dim, rng) for _ in range(count)], dim)
        if kind == "radial":
            return cls([RadialTransform.identity(dim, rng) for _ in range(count)], dim)
        if kind == "triangular":
            return cls([TriangularTransform.identity(dim) for _ in range(count)], dim)
        raise ValueError(f"'{kind}'. Transformation type must be one of {sorted(TRANSFORM_TYPES)}.")


def forward(chain: TransformChain, u: np.ndarray):
    """
    Maps a point or batch through the chain.

    Args:
        chain (TransformChain): The chain.
        u (np.ndarray): Point (n,) or batch (M, n).

    Returns:
        tuple: (x, log|det ∇F|) with shapes matching the input.

    Raises:
        NonFiniteValue: If the input or output is not finite.
    """
    batch, single = gaussian_core.as_batch(u, chain.get_dim())
    if not np.all(np.isfinite(batch)):
        raise errors.NonFiniteValue("Transformation input is not finite.")
    with np.errstate(over="ignore", invalid="ignore"):
        x, logdet = chain.forward(batch)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(logdet))):
        raise errors.NonFiniteValue("Transformation output is not finite.")
    return (x[0], float(logdet[0])) if single else (x, logdet)


class TransformedTarget(targets.TargetModel):
    """
    The transformed joint log p(F(u), z) + log|det ∇F(u)| as a target in u-space.

    It has a gradient but no Hessian, so base flows against it run in Stein mode.
    """
    has_hess: bool = False

    def __init__(self, model: targets.TargetModel, chain: TransformChain) -> None:
        if model.get_dim() != chain.get_dim():
            raise errors.DimensionMismatch("Model and chain dimensions differ.")
        super().__init__(model.get_dim())
        self.__model: targets.TargetModel = model
        self.__chain: TransformChain = chain

    def get_model(self) -> targets.TargetModel:
        return self.__model

    def get_chain(self) -> TransformChain:
        return self.__chain

    def _log_joint(self, x: np.ndarray) -> np.ndarray:
        points, logdet = self.__chain.forward(x)
        return np.asarray(self.__model.log_joint(points)) + logdet

    def _grad(self, x: np.ndarray) -> np.ndarray:
        return self.__chain.log_joint_grads(x, self.__model)[1]


def transformed_log_joint(u: np.ndarray, chain: TransformChain, model: targets.TargetModel):
    """
    Evaluates log p(F(u), z) + log|det ∇F(u)| at a point or batch.
    """
    return TransformedTarget(model, chain).log_joint(u)


class JointFlowState:
    """
    State of the joint base and transformation flow.

    Attributes:
        __base (fr_gaussian.GaussianFlowState | fr_mixture.MixtureFlowState): Base flow state in u-space.
        __chain (TransformChain): Current transformation.
        __gamma (float): Step scale γ ≥ 0 of the transformation flow.
    """
    def __init__(self, base, chain: TransformChain, gamma: float = 1.0) -> None:
        if gamma < 0.0:
            raise ValueError(f"'{gamma}'. Gamma must be non-negative.")
        if base.get_dim() != chain.get_dim():
            raise errors.DimensionMismatch("Base and chain dimensions differ.")
        if not base.get_mode().is_stein:
            raise ValueError(f"'{base.get_mode().value}'. The joint flow needs a Stein-mode base.")
        self.__base = base
        self.__chain: TransformChain = chain
        self.__gamma: float = float(gamma)

    def get_base(self):
        return self.__base

    def get_chain(self) -> TransformChain:
        return self.__chain

    def get_gamma(self) -> float:
        return self.__gamma

    def get_t(self) -> float:
        return self.__base.get_t()

    def get_dim(self) -> int:
        return self.__chain.get_dim()

    def is_mixture(self) -> bool:
        return isinstance(self.__base, fr_mixture.MixtureFlowState)

    def base_particles(self) -> quadrature.ParticleSet:
        """
        The base expectation particles in u-space, weighted by π_k w_i for a mixture base.
        """
        if self.is_mixture():
            return self.__base.recovered_particles(self.__base.get_rule())
        return self.__base.expectation_particles()

    def propagated_particles(self) -> quadrature.ParticleSet:
        if self.is_mixture():
            return self.__base.all_particles()
        return self.__base.get_particles()

    def to_checkpoint(self) -> dict:
        checkpoint: dict = self.__base.to_checkpoint()
        checkpoint["chain"] = self.__chain.to_json()
        checkpoint["gamma"] = self.__gamma
        return checkpoint


def _base_module(base):
    return fr_mixture if isinstance(base, fr_mixture.MixtureFlowState) else fr_gaussian


def joint_param_rhs(state: JointFlowState, model: targets.TargetModel) -> tuple[tuple, np.ndarray]:
    """
    Rates of the base parameters against the transformed joint and of the transformation parameters.

    Args:
        state (JointFlowState): Current state.
        model (targets.TargetModel): Target in x-space.

    Returns:
        tuple[tuple, np.ndarray]: The base module's parameter rates and dθ_F/dt.
    """
    target: TransformedTarget = TransformedTarget(model, state.get_chain())
    if state.is_mixture():
        base_rates: tuple = fr_mixture.mixture_param_rhs(state.get_base(), target)
    else:
        base_rates = fr_gaussian.param_rhs(state.get_base(), target)
    particles: quadrature.ParticleSet = state.base_particles()
    _, _, grad_theta = state.get_chain().log_joint_grads(particles.get_positions(), model)
    return base_rates, state.get_gamma() * (particles.get_weights() @ grad_theta)


def particle_kl(state: JointFlowState, model: targets.TargetModel, chain: TransformChain | None = None) -> float:
    """
    Particle-approximated KL Σ_i w_i (log b(u_i) − log p̃(u_i)), up to the constant log p(z).

    Args:
        state (JointFlowState): Current state; its base particles are used.
        model (targets.TargetModel): Target in x-space.
        chain (TransformChain | None): Chain to evaluate with. Defaults to the state's chain.

    Returns:
        float: The estimate.
    """
    chain = state.get_chain() if chain is None else chain
    particles: quadrature.ParticleSet = state.base_particles()
    positions: np.ndarray = particles.get_positions()
    log_ratio: np.ndarray = state.get_base().logpdf(positions) - transformed_log_joint(positions, chain, model)
    return float(particles.get_weights() @ log_ratio)


def transformed_velocity(state: JointFlowState, model: targets.TargetModel, u: np.ndarray,
                         component: int | None = None) -> np.ndarray:
    """
    Velocity of transformed particles x = F(u; θ_F): ∂F/∂θ·dθ_F/dt + ∇F·(Ãu + b̃).

    Args:
        state (JointFlowState): Current state.
        model (targets.TargetModel): Target in x-space.
        u (np.ndarray): Base particles (M, n).
        component (int | None): Mixture component the particles belong to; required for a mixture base.

    Returns:
        np.ndarray: x-space velocities (M, n).
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    target: TransformedTarget = TransformedTarget(model, state.get_chain())
    if state.is_mixture():
        if component is None:
            raise ValueError("A mixture base needs the component index of the particles.")
        coeffs: fr_gaussian.FlowCoeffs = fr_mixture.component_dynamics(state.get_base(), target, component)
    else:
        coeffs = fr_gaussian.dynamics_coeffs(state.get_base(), target)
    _, theta_rate = joint_param_rhs(state, model)
    base_velocity: np.ndarray = u @ coeffs.A.T + coeffs.b
    return state.get_chain().jvp_params(u, theta_rate) + state.get_chain().jvp_x(u, base_velocity)


def _expectation_points(base, parts: dict[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """
    Transported rule and weights for unpacked base segments.
    """
    rule: quadrature.QuadratureRule = base.get_rule()
    if isinstance(base, fr_mixture.MixtureFlowState):
        positions: np.ndarray = np.einsum("mj,kij->kmi", rule.get_nodes(), parts["sqrts"]) + parts["means"][:, None]
        component_weights: np.ndarray = gaussian_core.weights_from_log_odds(fr_mixture.clamp_log_odds(parts["log_odds"]))
        weights: np.ndarray = np.outer(component_weights, rule.get_weights()).reshape(-1)
        return positions.reshape(-1, base.get_dim()), weights
    return rule.get_nodes() @ parts["sqrt"].T + parts["mean"], rule.get_weights()


def _base_hook(base) -> Callable[[float, dict[str, np.ndarray]], None]:
    if isinstance(base, fr_mixture.MixtureFlowState):
        distances: list[np.ndarray] = [gaussian_core.mahalanobis(base.get_particles()[k], base.get_means()[k],
                                                                 base.get_precs()[k])
                                       for k in range(base.get_num_components())]

        def mixture_hook(t: float, parts: dict[str, np.ndarray]) -> None:
            for k in range(base.get_num_components()):
                component: dict[str, np.ndarray] = {"mean": parts["means"][k], "prec": parts["precs"][k],
                                                    "sqrt": parts["sqrts"][k], "particles": parts["particles"][k]}
                fr_gaussian.invariant_check(component, distances[k], t, k)
        return mixture_hook

    initial: np.ndarray = gaussian_core.mahalanobis(base.get_particles().get_positions(), base.get_mean(),
                                                    base.get_prec())
    return lambda t, parts: fr_gaussian.invariant_check(parts, initial, t)


def integrate_nf(init: JointFlowState, model: targets.TargetModel, T: float, ode: integrator.OdeConfig,
                 on_checkpoint: Callable[[JointFlowState], None] | None = None
                 ) -> tuple[quadrature.ParticleSet, JointFlowState]:
    """
    Runs the particle-flow-based normalizing flow up to flow time T.

    The base parameters, base particles and transformation parameters are co-integrated; the
    propagated base particles are mapped through the final transformation.

    Args:
        init (JointFlowState): Initial state.
        model (targets.TargetModel): Target in x-space.
        T (float): Horizon.
        ode (integrator.OdeConfig): Solver settings.
        on_checkpoint (Callable | None): Receives the state at each checkpoint.

    Returns:
        tuple[quadrature.ParticleSet, JointFlowState]: Transformed particles and the final state.

    Raises:
        DivergedFlow: If a base invariant fails or a transformation loses invertibility.
    """
    if T < 0.0:
        raise ValueError(f"'{T}'. Horizon must be non-negative.")
    base = init.get_base()
    module = _base_module(base)
    layout, base_vector = module.state_vector(base)
    size: int = layout.get_size()
    chain: TransformChain = init.get_chain()
    gamma: float = init.get_gamma()
    check_base: Callable = _base_hook(base)

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        parts: dict[str, np.ndarray] = layout.unpack(y[:size])
        current: TransformChain = chain.with_params(y[size:])
        base_rates: dict[str, np.ndarray] = module.segment_rhs(base.get_mode(), TransformedTarget(model, current),
                                                               base.get_rule(), parts, t)
        positions, weights = _expectation_points(base, parts)
        _, _, grad_theta = current.log_joint_grads(positions, model)
        return np.concatenate([layout.pack(base_rates), gamma * (weights @ grad_theta)])

    def hook(t: float, y: np.ndarray) -> None:
        check_base(t, layout.unpack(y[:size]))
        if not chain.with_params(y[size:]).is_invertible():
            raise errors.DivergedFlow("Transformation lost invertibility", t)

    def rebuild(t: float, y: np.ndarray) -> JointFlowState:
        return JointFlowState(module.state_from_parts(base, t, layout.unpack(y[:size])),
                              chain.with_params(y[size:]), gamma)

    start: float = init.get_t()
    vector: np.ndarray = np.concatenate([base_vector, chain.get_params()])
    final, checkpoints = integrator.integrate(rhs, vector, start, start + T, ode, hooks=[hook])
    if on_checkpoint is not None:
        for checkpoint in checkpoints:
            on_checkpoint(rebuild(checkpoint.get_t(), checkpoint.get_state()))
    state: JointFlowState = rebuild(start + T, final) if T > 0.0 else init
    propagated: quadrature.ParticleSet = state.propagated_particles()
    x, _ = forward(state.get_chain(), propagated.get_positions())
    LOGGER.info("Normalizing flow with %d transformations reached t=%g",
                len(state.get_chain().get_transforms()), start + T)
    return quadrature.ParticleSet(x, propagated.get_weights()), state
