"""Exception types for data-dependent failures.

Argument validation raises plain ValueError; the classes here mark failures
caused by the *data* (damaged streams, malformed containers), which the CLI
maps to exit code 1.
"""


class DataError(Exception):
    """Base class for errors caused by malformed input data."""


class CorruptStreamError(DataError):
    """An encoded bit stream is truncated or has trailing garbage."""


class CorruptContainerError(DataError):
    """A container file is structurally damaged (CRC, offsets, sizes)."""


class UnsupportedFormatError(DataError):
    """The input is not a format this package knows how to read."""
