"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors exit 1, DataError exits 2,
NumericError exits 3.
"""


class GrbasError(Exception):
    """Base class for all package errors."""


class DataError(GrbasError):
    """Malformed, missing, or inconsistent input data."""


class AudioFormatError(DataError):
    """A WAV file violates the supported container/encoding constraints."""


class ShapeError(GrbasError):
    """Tensor shapes do not satisfy an operation's contract."""


class NumericError(GrbasError):
    """A numeric failure such as a non-finite loss during training."""
