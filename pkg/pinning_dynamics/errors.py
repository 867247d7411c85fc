# pinning_dynamics/errors.py

from typing import Optional


class PinningError(Exception):
    """Base class for every error raised by the toolkit."""


class InvalidInputError(PinningError, ValueError):
    """A precondition of an operation is violated."""


class CapacityError(PinningError):
    """
    A requested size exceeds one of the configured capacity bounds.
    The message always names the bound that was hit.
    """

    def __init__(self, bound_name: str, bound: int, requested: int, detail: str = ""):
        self.bound_name = bound_name
        self.bound = bound
        self.requested = requested
        message = f"{bound_name} exceeded: requested {requested}, bound is {bound}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class DisconnectedError(PinningError):
    """A state space that must be irreducible splits into several classes."""

    def __init__(self, label: str, n_components: int):
        self.n_components = n_components
        super().__init__(f"{label}: state space has {n_components} communicating classes, expected 1")


class ConvergenceError(PinningError):
    def __init__(self, message: str, residual: Optional[float] = None):
        self.residual = residual
        if residual is not None:
            message = f"{message} (residual {residual:.3e})"
        super().__init__(message)


class OrderViolationError(PinningError):
    """Raised by the grand coupling when two ordered replicas cross."""


class ScheduleError(PinningError, ValueError):
    pass


class InsufficientDataError(PinningError):
    pass
