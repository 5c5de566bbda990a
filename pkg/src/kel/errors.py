"""Exception hierarchy.

Two families: ``ValidationError`` for bad input (CLI exit code 2) and
``NumericalError`` for failures of a computation on valid input (exit code 3).
"""


class KelError(Exception):
    """Base class for all package errors."""


class ValidationError(KelError, ValueError):
    pass


class NumericalError(KelError, ArithmeticError):
    pass


class NotControllable(NumericalError):
    pass


class RateNotPositive(ValidationError):
    pass


class NonPositiveForm(NumericalError):
    pass


class NonFiniteState(NumericalError):
    pass


class GridMismatch(ValidationError):
    pass


class SingularReference(NumericalError):
    pass


class TooLarge(ValidationError):
    pass


class NotConverged(NumericalError):
    pass


class DegenerateGeometry(NumericalError):
    pass


class NotPositiveDefinite(NumericalError):
    pass


class DriftDifferenceOutsideRange(NumericalError):
    pass


class NonPositiveValue(ValidationError):
    pass


class DegenerateSeries(NumericalError):
    pass


class NotStationary(NumericalError):
    pass


class NotLinear(ValidationError):
    pass
