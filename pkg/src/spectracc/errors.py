"""Exception hierarchy. The CLI maps each family to an exit code."""


class SpectraccError(Exception):
    exit_code = 1


class ConfigError(SpectraccError, ValueError):
    exit_code = 2


class DataError(SpectraccError, ValueError):
    exit_code = 3


class GridMismatchError(DataError):
    pass


class FormatError(DataError):
    pass


class TruncationError(FormatError):
    pass


class NumericalError(SpectraccError, ArithmeticError):
    exit_code = 4


class DegenerateEstimateError(NumericalError):
    pass


class RankDeficientError(NumericalError):
    pass
