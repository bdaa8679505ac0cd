"""Exception types shared across the package."""


class AdcsError(Exception):
    """Base class for all package errors."""


class InvalidRotation(AdcsError, ValueError):
    pass


class NotSkew(AdcsError, ValueError):
    pass


class SingularInertia(AdcsError, ArithmeticError):
    """Raised when the assembled locked inertia is not positive definite."""


class DegenerateDirections(AdcsError, ValueError):
    """Raised when two measured directions are too close to parallel."""


class NewtonNoConvergence(AdcsError, ArithmeticError):
    """Newton-Raphson did not reach the residual tolerance.

    ``trace`` holds the residual norm after each iteration.
    """

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class ParseError(AdcsError, ValueError):
    def __init__(self, line, column, reason):
        super().__init__(f"line {line}, column {column}: {reason}")
        self.line = line
        self.column = column
        self.reason = reason


class NonMonotoneTime(AdcsError, ValueError):
    pass


class StepError(AdcsError):
    """Wraps an error raised while processing the sample at time ``t``."""

    def __init__(self, t, cause):
        super().__init__(f"t={t:.6f} s: {cause}")
        self.t = t
        self.cause = cause
