"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
VerificationError -> 4, everything else -> 1.
"""


class HidflowError(Exception):
    """Base class for all package errors."""


class ShapeError(HidflowError):
    """Operands do not conform; message names both shapes."""


class NumericsError(HidflowError):
    """Degenerate numeric state (near-zero divisor, non-finite values)."""


class SingularityError(NumericsError):
    """A residual mixing matrix W+I is numerically singular."""


class ConfigError(HidflowError):
    """Malformed or unknown configuration keys/values."""


class DataError(HidflowError):
    """Malformed cube/checkpoint files or unusable input data."""


class VerificationError(HidflowError):
    """A self-check suite found a failing property."""
