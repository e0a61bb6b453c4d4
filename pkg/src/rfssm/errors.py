"""Exception hierarchy shared across the package."""


class RfssmError(Exception):
    """Base class for all library errors."""


class InvalidSpecError(RfssmError, ValueError):
    """A kernel spec, config or other input violates its invariants."""


class ConfigError(InvalidSpecError):
    """A run configuration failed validation."""


class SchemaError(RfssmError, ValueError):
    """A file does not match the expected column layout."""


class NumericalDegeneracyError(RfssmError, ArithmeticError):
    """A posterior factor or predictive scale became degenerate.

    ``stream`` identifies the offending particle stream when known.
    """

    def __init__(self, message, stream=None):
        if stream is not None:
            message = f"{message} (stream {stream})"
        super().__init__(message)
        self.stream = stream


class DegenerateWeightsError(NumericalDegeneracyError):
    """Every log-weight is -inf, so weights cannot be normalized."""


class DegenerateTrajectoryError(NumericalDegeneracyError):
    """A trajectory is rank deficient and cannot be standardized."""
