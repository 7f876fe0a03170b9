"""
Deterministic ODE integration of composite flow states with invariant hooks.

Imports:
    enum
    math
    numpy
    errors: Exception hierarchy of the library.

Classes:
    Method
    OdeConfig
    StateLayout
    CompositeState
    Checkpoint

Functions:
    rk4_step, rkf45_step, integrate
"""

import enum
import logging
import math
from collections.abc import Callable, Sequence

import numpy as np

from fisherflow import errors

LOGGER = logging.getLogger(__name__)

MIN_STEP_FRACTION: float = 1e-12
STAGE_FAILURES: tuple[type[Exception], ...] = (errors.NonFiniteValue, errors.NotPositiveDefinite, errors.DivergedFlow)

Rhs = Callable[[float, np.ndarray], np.ndarray]
Hook = Callable[[float, np.ndarray], bool | None]


class Method(enum.Enum):
    """
    Available explicit Runge-Kutta schemes.
    """
    RK4 = "rk4"
    RK45 = "rk45"


class OdeConfig:
    """
    Solver settings.

    Attributes:
        __method (Method): RK4 with fixed step or adaptive RK45.
        __step (float): RK4 step, also the initial RK45 step.
        __rel_tol (float): RK45 relative tolerance.
        __abs_tol (float): RK45 absolute tolerance.
        __max_steps (int): Largest number of step attempts.
        __checkpoint_every (float): Flow-time spacing of checkpoints.
    """
    def __init__(self, method: Method | str = Method.RK4, step: float = 1e-2, rel_tol: float = 1e-6,
                 abs_tol: float = 1e-9, max_steps: int = 10 ** 6, checkpoint_every: float = 0.5) -> None:
        """
        Initialises and validates the solver settings.

        Raises:
            ValueError: If any setting is out of range.
        """
        self.__method: Method = Method(method)
        if step <= 0.0:
            raise ValueError(f"'{step}'. Step must be positive.")
        if rel_tol <= 0.0 or abs_tol <= 0.0:
            raise ValueError(f"'{rel_tol}', '{abs_tol}'. Tolerances must be positive.")
        if max_steps < 1:
            raise ValueError(f"'{max_steps}'. Maximum steps must be a positive integer.")
        if checkpoint_every <= 0.0:
            raise ValueError(f"'{checkpoint_every}'. Checkpoint spacing must be positive.")
        self.__step: float = float(step)
        self.__rel_tol: float = float(rel_tol)
        self.__abs_tol: float = float(abs_tol)
        self.__max_steps: int = int(max_steps)
        self.__checkpoint_every: float = float(checkpoint_every)

    def get_method(self) -> Method:
        return self.__method

    def get_step(self) -> float:
        return self.__step

    def get_rel_tol(self) -> float:
        return self.__rel_tol

    def get_abs_tol(self) -> float:
        return self.__abs_tol

    def get_max_steps(self) -> int:
        return self.__max_steps

    def get_checkpoint_every(self) -> float:
        return self.__checkpoint_every

    def to_dict(self) -> dict:
        return {"method": self.__method.value, "step": self.__step, "rel_tol": self.__rel_tol,
                "abs_tol": self.__abs_tol, "max_steps": self.__max_steps,
                "checkpoint_every": self.__checkpoint_every}


class StateLayout:
    """
    Maps named array segments onto one flat vector.

    Attributes:
        __segments (tuple[tuple[str, tuple[int, ...]], ...]): Ordered (name, shape) pairs.
        __offsets (dict[str, tuple[int, int]]): Start and end of each segment.
    """
    def __init__(self, segments: Sequence[tuple[str, tuple[int, ...]]]) -> None:
        self.__segments: tuple[tuple[str, tuple[int, ...]], ...] = tuple((name, tuple(shape)) for name, shape in segments)
        self.__offsets: dict[str, tuple[int, int]] = {}
        start: int = 0
        for name, shape in self.__segments:
            if name in self.__offsets:
                raise ValueError(f"'{name}'. Segment names must be unique.")
            end: int = start + math.prod(shape)
            self.__offsets[name] = (start, end)
            start = end
        self.__size: int = start

    def get_size(self) -> int:
        return self.__size

    def get_names(self) -> list[str]:
        return [name for name, _ in self.__segments]

    def pack(self, parts: dict[str, np.ndarray]) -> np.ndarray:
        """
        Flattens the named parts into one vector.

        Args:
            parts (dict[str, np.ndarray]): One array per segment, of the segment's shape.

        Returns:
            np.ndarray: The flat vector.
        """
        vector: np.ndarray = np.empty(self.__size)
        for name, shape in self.__segments:
            part: np.ndarray = np.asarray(parts[name], dtype=float)
            if part.shape != shape:
                raise errors.DimensionMismatch(f"'{part.shape}'. Segment {name} must have shape {shape}.")
            start, end = self.__offsets[name]
            vector[start:end] = part.reshape(-1)
        return vector

    def unpack(self, vector: np.ndarray) -> dict[str, np.ndarray]:
        """
        Splits a flat vector into copies of its named parts.
        """
        if vector.shape != (self.__size,):
            raise errors.DimensionMismatch(f"'{vector.shape}'. State vector must have size {self.__size}.")
        return {name: vector[slice(*self.__offsets[name])].reshape(shape).copy() for name, shape in self.__segments}


class CompositeState:
    """
    A flat state vector with its layout.

    Attributes:
        __layout (StateLayout): Segment layout.
        __vector (np.ndarray): Read-only flat values.
    """
    def __init__(self, layout: StateLayout, vector: np.ndarray) -> None:
        self.__layout: StateLayout = layout
        self.__vector: np.ndarray = np.array(vector, dtype=float)
        if self.__vector.shape != (layout.get_size(),):
            raise errors.DimensionMismatch("State vector does not match its layout.")
        self.__vector.setflags(write=False)

    @classmethod
    def from_parts(cls, layout: StateLayout, parts: dict[str, np.ndarray]) -> "CompositeState":
        return cls(layout, layout.pack(parts))

    def get_layout(self) -> StateLayout:
        return self.__layout

    def get_vector(self) -> np.ndarray:
        return self.__vector

    def unpack(self) -> dict[str, np.ndarray]:
        return self.__layout.unpack(self.__vector)


class Checkpoint:
    """
    A value snapshot of the integrated state.

    Attributes:
        __t (float): Flow time.
        __state (np.ndarray): Copy of the state vector.
    """
    def __init__(self, t: float, state: np.ndarray) -> None:
        self.__t: float = float(t)
        self.__state: np.ndarray = np.array(state, dtype=float)
        self.__state.setflags(write=False)

    def get_t(self) -> float:
        return self.__t

    def get_state(self) -> np.ndarray:
        return self.__state


def _finite(values: np.ndarray, t: float) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise errors.NonFiniteValue(f"Right-hand side is not finite at t = {t:.6g}.")
    return values


def rk4_step(rhs: Rhs, state: np.ndarray, t: float, h: float) -> np.ndarray:
    """
    Classical fourth-order Runge-Kutta step.

    Args:
        rhs (Rhs): Right-hand side f(t, y).
        state (np.ndarray): Current state.
        t (float): Current time.
        h (float): Step size.

    Returns:
        np.ndarray: State at t + h.

    Raises:
        NonFiniteValue: If any stage is not finite.
    """
    k1: np.ndarray = _finite(rhs(t, state), t)
    k2: np.ndarray = _finite(rhs(t + 0.5 * h, state + 0.5 * h * k1), t + 0.5 * h)
    k3: np.ndarray = _finite(rhs(t + 0.5 * h, state + 0.5 * h * k2), t + 0.5 * h)
    k4: np.ndarray = _finite(rhs(t + h, state + h * k3), t + h)
    return state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rkf45_step(rhs: Rhs, state: np.ndarray, t: float, h: float) -> tuple[np.ndarray, np.ndarray]:
    """
    Runge-Kutta-Fehlberg 4(5) step.

    Returns:
        tuple[np.ndarray, np.ndarray]: Fifth-order state at t + h and the embedded error estimate.
    """
    k1: np.ndarray = _finite(rhs(t, state), t)
    k2: np.ndarray = _finite(rhs(t + h / 4.0, state + h * k1 / 4.0), t)
    k3: np.ndarray = _finite(rhs(t + 3.0 * h / 8.0, state + h * (3.0 * k1 + 9.0 * k2) / 32.0), t)
    k4: np.ndarray = _finite(rhs(t + 12.0 * h / 13.0,
                                 state + h * (1932.0 * k1 - 7200.0 * k2 + 7296.0 * k3) / 2197.0), t)
    k5: np.ndarray = _finite(rhs(t + h, state + h * (439.0 / 216.0 * k1 - 8.0 * k2 + 3680.0 / 513.0 * k3
                                                     - 845.0 / 4104.0 * k4)), t)
    k6: np.ndarray = _finite(rhs(t + h / 2.0, state + h * (-8.0 / 27.0 * k1 + 2.0 * k2 - 3544.0 / 2565.0 * k3
                                                           + 1859.0 / 4104.0 * k4 - 11.0 / 40.0 * k5)), t)
    fourth: np.ndarray = state + h * (25.0 / 216.0 * k1 + 1408.0 / 2565.0 * k3 + 2197.0 / 4104.0 * k4 - k5 / 5.0)
    fifth: np.ndarray = state + h * (16.0 / 135.0 * k1 + 6656.0 / 12825.0 * k3 + 28561.0 / 56430.0 * k4
                                     - 9.0 / 50.0 * k5 + 2.0 / 55.0 * k6)
    return fifth, fifth - fourth


def _run_hooks(hooks: Sequence[Hook], t: float, state: np.ndarray) -> None:
    for hook in hooks:
        if hook(t, state) is False:
            raise errors.DivergedFlow("Invariant hook vetoed the step", t)


def integrate(rhs: Rhs, init: np.ndarray, t0: float, T: float, config: OdeConfig,
              hooks: Sequence[Hook] = ()) -> tuple[np.ndarray, list[Checkpoint]]:
    """
    Integrates y' = f(t, y) from t0 to T.

    Checkpoints are taken at t0, then each time the flow time passes a multiple of the
    checkpoint spacing, and at T. Hooks run after every accepted step and may veto it by
    returning False or raising DivergedFlow.

    Args:
        rhs (Rhs): Right-hand side.
        init (np.ndarray): Initial flat state.
        t0 (float): Start time.
        T (float): End time, T ≥ t0.
        config (OdeConfig): Solver settings.
        hooks (Sequence[Hook]): Invariant checks. Defaults to none.

    Returns:
        tuple[np.ndarray, list[Checkpoint]]: Final state and checkpoint series.

    Raises:
        MaxStepsExceeded: If the step budget runs out.
        DivergedFlow: If a hook vetoes or a stage is not finite.
    """
    state: np.ndarray = np.array(init, dtype=float)
    if T < t0:
        raise ValueError(f"'{T}'. End time must not precede start time {t0}.")
    if T == t0:
        return state, []

    checkpoints: list[Checkpoint] = [Checkpoint(t0, state)]
    every: float = config.get_checkpoint_every()
    next_mark: float = t0 + every
    span: float = T - t0
    t: float = t0
    LOGGER.info("Integrating %s from t=%g to t=%g", config.get_method().value, t0, T)

    # Error handling
    try:
        if config.get_method() is Method.RK4:
            n_steps: int = max(1, math.ceil(span / config.get_step() - 1e-9))
            if n_steps > config.get_max_steps():
                raise errors.MaxStepsExceeded(f"'{n_steps}'. Horizon needs more than {config.get_max_steps()} steps.")
            h: float = span / n_steps
            for index in range(1, n_steps + 1):
                state = rk4_step(rhs, state, t, h)
                t = T if index == n_steps else t0 + index * h
                _run_hooks(hooks, t, state)
                if t >= next_mark - 1e-9 * h or index == n_steps:
                    checkpoints.append(Checkpoint(t, state))
                    while next_mark <= t + 1e-9 * h:
                        next_mark += every
        else:
            h = min(config.get_step(), span)
            attempts: int = 0
            while t < T:
                attempts += 1
                if attempts > config.get_max_steps():
                    raise errors.MaxStepsExceeded(f"RK45 exceeded {config.get_max_steps()} step attempts.")
                h_try: float = min(h, T - t, max(next_mark - t, 0.0) or h)
                try:
                    candidate, error = rkf45_step(rhs, state, t, h_try)
                except STAGE_FAILURES as failure:
                    # A trial stage left the domain of the right-hand side; retry shorter.
                    if h_try <= MIN_STEP_FRACTION * span:
                        raise errors.DivergedFlow(f"Step size underflow ({failure})", t) from failure
                    LOGGER.debug("Rejected RK45 step h=%g at t=%g: %s", h_try, t, failure)
                    h = 0.25 * h_try
                    continue
                scale: np.ndarray = config.get_abs_tol() + config.get_rel_tol() * np.maximum(np.abs(state), np.abs(candidate))
                norm: float = float(np.sqrt(np.mean((error / scale) ** 2)))
                factor: float = 5.0 if norm == 0.0 else min(5.0, max(0.2, 0.9 * norm ** -0.2))
                if norm <= 1.0:
                    t = T if T - (t + h_try) <= 1e-12 * span else t + h_try
                    state = candidate
                    _run_hooks(hooks, t, state)
                    if t >= next_mark - 1e-12 * span or t == T:
                        checkpoints.append(Checkpoint(t, state))
                        while next_mark <= t + 1e-12 * span:
                            next_mark += every
                h = h_try * factor
    except errors.NonFiniteValue as error:
        raise errors.DivergedFlow(str(error), t) from error
    return state, checkpoints
