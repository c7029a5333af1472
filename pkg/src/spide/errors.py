"""Exception types shared across the package."""


class SpideError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SpideError, ValueError):
    """A parameter is outside its admissible range."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ShapeError(SpideError, ValueError):
    pass


class ContractError(SpideError, RuntimeError):
    """An operation was called on inputs that violate its contract."""


class EvaluationError(SpideError, RuntimeError):
    """A user-supplied evaluator failed at a sample point."""

    def __init__(self, where, point, cause=None):
        self.where = where
        self.point = point
        msg = f"{where} failed at {point!r}"
        if cause is not None:
            msg += f": {cause}"
        super().__init__(msg)


class NumericalError(SpideError, FloatingPointError):
    """Non-finite values or a quadrature that would not converge."""
