"""Exception hierarchy shared by every ganlink module.

The CLI maps these onto exit codes: configuration problems exit 2, data and
input problems exit 3, anything else exits 1.
"""


class GanlinkError(Exception):
    """Base class for all library errors."""


class DimensionError(GanlinkError, ValueError):
    """Tensor shapes do not line up for an operation."""


class ConfigError(GanlinkError, ValueError):
    """A configuration value or layer geometry is invalid."""


class UsageError(GanlinkError, RuntimeError):
    """An API was called in a state where it is not valid."""


class InputError(GanlinkError, ValueError):
    """A runtime input value is outside its admissible range."""


class DataError(GanlinkError, ValueError):
    """Dataset contents are missing or malformed."""


class NonFiniteError(GanlinkError, FloatingPointError):
    """A tensor picked up NaN or Inf values."""


class LookupFailure(DataError, KeyError):
    """A segment or word id is not present."""

    def __str__(self):
        return Exception.__str__(self)


class CheckpointError(GanlinkError, IOError):
    """Base class for binary file decoding failures."""


class MagicError(CheckpointError):
    """File does not start with the expected magic bytes."""


class VersionError(CheckpointError):
    """File declares a format version this reader does not know."""


class TruncationError(CheckpointError):
    """File ended before the declared payload was read."""
