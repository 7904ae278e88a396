"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line interface:
2 for configuration problems, 3 for invalid input data and 4 for numerical
failures.
"""

from __future__ import annotations


class PensionALMError(Exception):
    """Base class for all package errors."""

    exit_code = 4


class ConfigError(PensionALMError):
    exit_code = 2


class DataValidationError(PensionALMError):
    exit_code = 3


class NumericalError(PensionALMError):
    exit_code = 4


# transforms
class NonPositiveLogArgument(DataValidationError):
    pass


class MisalignedSeries(DataValidationError):
    pass


class MissingAuxiliary(ConfigError):
    pass


# mortality
class AgeOutOfRange(DataValidationError):
    pass


class InsufficientAges(DataValidationError):
    pass


class DegenerateData(NumericalError):
    pass


# varmodel
class DimensionMismatch(ConfigError):
    pass


class NotPSD(NumericalError):
    pass


# calibration
class RankDeficient(NumericalError):
    pass


class TooFewObservations(NumericalError):
    pass


class InconsistentViews(ConfigError):
    pass


class ForecastOutOfRange(ConfigError):
    pass


# assets
class NoBracket(NumericalError):
    pass


class MissingConvexity(ConfigError):
    pass


# liabilities
class NonPositiveCPI(DataValidationError):
    pass


class MisalignedPaths(DataValidationError):
    pass


class UnknownGroup(ConfigError):
    pass


# almsim / io
class MissingChannel(DataValidationError):
    pass
