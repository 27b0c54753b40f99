"""Exception hierarchy.

CLI exit codes are attached to the three top-level families: configuration
problems exit with 2, data problems with 3 and numerical failures with 4.
"""


class NsvlmcError(Exception):
    exit_code = 1


class ConfigError(NsvlmcError, ValueError):
    exit_code = 2


class InvalidSpec(ConfigError):
    pass


class DataError(NsvlmcError):
    exit_code = 3


class MissingFile(DataError, FileNotFoundError):
    pass


class SchemaMismatch(DataError):
    pass


class SizeMismatch(DataError):
    pass


class ZeroVariance(DataError):
    pass


class EmptyTestSet(DataError):
    pass


class SeriesTooShort(DataError, ValueError):
    pass


class NumericalError(NsvlmcError, ArithmeticError):
    exit_code = 4


class NotPositiveDefinite(NumericalError):
    pass


class NonFiniteFunctionValue(NumericalError):
    pass


class NonFiniteGradient(NumericalError):
    pass


class NonFiniteObjective(NumericalError):
    pass


class NonPositiveVariance(NumericalError):
    pass


class NonPositiveNoise(NumericalError):
    pass


class DimensionMismatch(NsvlmcError, ValueError):
    exit_code = 2


class RankTooLarge(NsvlmcError, ValueError):
    exit_code = 2
