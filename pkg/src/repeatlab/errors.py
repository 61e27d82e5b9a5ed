"""Exception hierarchy shared by every repeatlab module."""


class RepeatLabError(Exception):
    """Base class for all errors raised by repeatlab."""


class ConfigurationError(RepeatLabError, ValueError):
    """Invalid configuration, shape mismatch, or unknown option."""


class InterventionError(RepeatLabError):
    """A dataset-level intervention cannot be applied to the given data."""


class NumericalError(RepeatLabError, ArithmeticError):
    """A numerical singularity (e.g. normalising a near-zero vector)."""


class PlottingError(RepeatLabError):
    """Invalid input to one of the plotting helpers."""


class OutputError(RepeatLabError, OSError):
    """Writing or reading an artifact file failed."""
