"""Exception hierarchy shared by all modules.

The CLI maps :class:`ConfigError` to exit code 2 and
:class:`NumericalDomainError` to exit code 3.
"""


class SRCVQKDError(Exception):
    """Base class for all package errors."""


class ParameterDomainError(SRCVQKDError, ValueError):
    """A physical parameter lies outside its allowed domain."""


class NumericalDomainError(SRCVQKDError, ArithmeticError):
    """A closed-form expression left its numerically valid region."""


class EstimationError(SRCVQKDError):
    """Phase estimation failed (zero reference vector)."""


class StatisticsError(SRCVQKDError):
    """Too few samples for a reliable statistic."""


class InsufficientRoundsError(StatisticsError):
    """Not enough usable rounds for covariance estimation."""


class FitError(SRCVQKDError):
    """Least-squares calibration fit is rank deficient."""


class ConfigError(SRCVQKDError, ValueError):
    """Invalid or unknown configuration content."""
