"""
Error types raised by the simulator.

Each error carries the CLI exit code it maps to:
1 = configuration, 2 = runtime/protocol, 3 = I/O.
"""


class CfflError(Exception):
    """Base class for all simulator errors."""
    exit_code = 2


# --- Configuration (exit code 1) ---

class ConfigError(CfflError):
    exit_code = 1


class InvalidConfig(ConfigError):
    """A value is outside its allowed range."""


# --- Runtime / protocol (exit code 2) ---

class EmptyDataset(CfflError):
    pass


class InfeasiblePlan(CfflError):
    """Partition constraints cannot be met by the source dataset."""


class InsufficientClassExamples(CfflError):
    pass


class DimensionMismatch(CfflError):
    pass


class MissingWeight(CfflError):
    pass


class CountOutOfRange(CfflError):
    pass


class AllEvicted(CfflError):
    """The reputable set became empty."""


class ZeroValidationSum(CfflError):
    pass


class NotReputable(CfflError):
    pass


class DegenerateInput(CfflError):
    """Fairness is undefined because a standard deviation is zero."""


class NumericalError(CfflError):
    """Parameters became NaN or infinite."""


# --- I/O (exit code 3) ---

class DataIOError(CfflError):
    exit_code = 3


class FormatError(DataIOError):
    pass


class MissingMetrics(DataIOError):
    pass
