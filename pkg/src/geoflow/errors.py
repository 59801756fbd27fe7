"""Exception hierarchy shared across the package."""


class GeoflowError(Exception):
    """Base class for all errors raised by this package."""


class CaseError(GeoflowError):
    """Malformed or inconsistent case input.

    Carries the offending line number when the problem is tied to a
    specific row of the case file.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class PowerFlowError(GeoflowError):
    """Numerical failure in a power-flow solve (non-convergence, singular Jacobian)."""

    def __init__(self, message: str, residual: float | None = None):
        if residual is not None:
            message = f"{message} (residual {residual:.3e})"
        super().__init__(message)
        self.residual = residual


class ContinuationError(GeoflowError):
    """Continuation trace could not be started or advanced at all."""


class GeodesicError(GeoflowError):
    """Geodesic integration failed its conservation or regularity checks."""
