"""Exception types shared across the package."""


class StochGNError(Exception):
    """Base class for package errors."""


class InvalidParameter(StochGNError, ValueError):
    pass


class InvalidConfiguration(StochGNError, ValueError):
    """A schedule or run configuration violates a required inequality."""


class InvalidState(StochGNError, ValueError):
    pass


class UnsupportedOperation(StochGNError):
    """Raised e.g. when an exact full pass is requested in expectation mode."""


class SubsolverError(StochGNError, RuntimeError):
    """The prox-linear subsolver stopped at ``k_max`` above tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class DataError(StochGNError, ValueError):
    """Malformed or unusable input data."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
