"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to.
"""


class FrcError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(FrcError, ValueError):
    """Invalid user input: bad parameters, shapes, files or configuration."""

    exit_code = 2


class ParameterError(ValidationError):
    """A model parameter is outside its admissible range."""


class GridError(ValidationError):
    """The tenor grid is malformed."""


class DomainError(ValidationError):
    """An input lies outside the domain of an operation."""


class NumericalError(FrcError, ArithmeticError):
    """A numerical procedure failed (singularity, instability, non-convergence)."""

    exit_code = 3


class EstimationError(NumericalError):
    """A statistical estimator could not be formed from the data."""


class UndefinedScoreError(NumericalError):
    """A goodness-of-fit score has a zero denominator."""


class FrcIOError(FrcError, OSError):
    """Reading or writing an artifact failed."""

    exit_code = 4
