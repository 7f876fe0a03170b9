"""
Defines the exception hierarchy raised by fisherflow.

Classes:
    FisherFlowError
    NotPositiveDefinite
    DimensionMismatch
    DegreeOutOfRange
    NodeBudgetExceeded
    NonFiniteValue
    SingularPoint
    DivergedFlow
    MaxStepsExceeded
    ConfigError
"""


class FisherFlowError(Exception):
    """
    Base class for every error raised by the library.
    """


class NotPositiveDefinite(FisherFlowError):
    """
    Raised when a Cholesky factorisation fails.
    """


class DimensionMismatch(FisherFlowError, ValueError):
    """
    Raised when vector and matrix shapes do not agree.
    """


class DegreeOutOfRange(FisherFlowError, ValueError):
    """
    Raised when a Gauss-Hermite degree is outside [1, 64].
    """


class NodeBudgetExceeded(FisherFlowError):
    """
    Raised when a tensor-product rule would exceed the node budget.
    """


class NonFiniteValue(FisherFlowError):
    """
    Raised when an evaluation produces inf or nan.
    """


NonFinite = NonFiniteValue


class SingularPoint(FisherFlowError):
    """
    Raised when a derivative is requested at a point where it does not exist.
    """


class DivergedFlow(FisherFlowError):
    """
    Raised when an integrated flow breaks one of its invariants.

    Attributes:
        t (float): The flow time at which the failure was detected.
        component (int | None): Index of the offending mixture component, if any.
    """
    def __init__(self, message: str, t: float, component: int | None = None) -> None:
        """
        Initialises the error with the failing time and component.

        Args:
            message (str): Description of the failed check.
            t (float): The flow time of the failure.
            component (int | None): The offending component index. Defaults to None.
        """
        where: str = f" (component {component})" if component is not None else ""
        super().__init__(f"{message} at t = {t:.6g}{where}")
        self.t: float = t
        self.component: int | None = component


class MaxStepsExceeded(FisherFlowError):
    """
    Raised when an integration needs more steps than configured.
    """


class ConfigError(FisherFlowError, ValueError):
    """
    Raised when a configuration value is invalid or unknown.

    Attributes:
        key (str | None): The offending configuration key.
    """
    def __init__(self, message: str, key: str | None = None) -> None:
        super().__init__(message)
        self.key: str | None = key
