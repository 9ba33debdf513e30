"""Exception hierarchy shared by every module."""


class SelfPlayError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(SelfPlayError, ValueError):
    """Table shapes do not agree."""


class InvalidParameterError(SelfPlayError, ValueError):
    """A scalar hyperparameter violates its precondition."""


class DomainError(SelfPlayError, ValueError):
    """A value lies outside the domain an operation is defined on."""


class NumericalDegeneracyError(SelfPlayError, ArithmeticError):
    """A normalization produced non-finite or all-zero rows."""


class TrainingDivergenceError(SelfPlayError, RuntimeError):
    """An iterative optimizer produced a non-finite loss."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class UnsupportedOracleError(InvalidParameterError):
    """The preference oracle kind is not supported by the requested update."""


class ConfigValidationError(SelfPlayError, ValueError):
    """A run configuration failed validation; ``violations`` lists every problem."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.violations))


class ComparisonError(SelfPlayError, ValueError):
    """Two artifacts cannot be compared."""
