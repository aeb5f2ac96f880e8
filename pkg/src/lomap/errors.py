"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to.
"""


class LomapError(Exception):
    exit_code = 1


class ParameterError(LomapError, ValueError):
    """Invalid argument, configuration value or shape."""

    exit_code = 2


class ShapeError(ParameterError):
    pass


class ScheduleValidationError(ParameterError):
    """Schedule does not reach the terminal-noise condition."""


class ConfigurationError(ParameterError):
    pass


class DataFormatError(LomapError):
    """Corrupt, truncated or mismatched file."""

    exit_code = 3


class GenerationError(LomapError):
    """Offline data generation could not produce a valid trajectory."""

    exit_code = 3


class NumericalError(LomapError, ArithmeticError):
    exit_code = 4


class NumericalGuardError(NumericalError):
    pass


class DivergenceError(NumericalError):
    pass


class DegenerateEstimateError(NumericalError):
    pass
