"""Exception types and input checks shared across the package."""

import numpy as np


class HarmacsError(Exception):
    """Base class for all package errors."""


class InvalidInputError(HarmacsError, ValueError):
    pass


class DomainError(HarmacsError, ValueError):
    """Input lies outside the domain of a pointwise construction."""


class InternalError(HarmacsError, RuntimeError):
    pass


class ChartOutOfRangeError(DomainError):
    pass


class DegenerateScaleError(InvalidInputError):
    """Requested radius is too small compared with the grid spacing."""


class UnsupportedMetricError(HarmacsError, ValueError):
    pass


class NotReducibleError(DomainError):
    pass


class ChiralityError(DomainError):
    pass


class DivergenceError(HarmacsError, RuntimeError):
    """Raised by the flow when the iteration blows up.

    ``last_state`` holds the last state that passed all checks.
    """

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class StepFailure(HarmacsError, RuntimeError):
    pass


def check_matrix_stack(a, name="matrix"):
    """Return ``a`` as a float array of shape (..., m, m) with even m >= 2."""
    a = np.asarray(a, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise InvalidInputError(f"{name} must be square, got shape {a.shape}")
    m = a.shape[-1]
    if m < 2 or m % 2:
        raise InvalidInputError(f"{name} dimension must be even and >= 2, got {m}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return a


def check_same_dim(a, b, what="operands"):
    if a.shape[-1] != b.shape[-1]:
        raise InvalidInputError(
            f"dimension mismatch between {what}: {a.shape[-1]} vs {b.shape[-1]}"
        )


def check_positive(value, name):
    if not value > 0:
        raise InvalidInputError(f"{name} must be positive, got {value}")
    return value
