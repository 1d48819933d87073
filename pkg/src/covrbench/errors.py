"""Exception hierarchy shared across the engine.

Exit-code mapping used by the CLI: validation problems exit 1, I/O and
file-format problems exit 2, numeric failures exit 3.
"""


class BenchError(Exception):
    """Base class for all engine errors."""


class FormatError(BenchError):
    """File header is not the expected format (bad magic or version)."""


class CorruptionError(BenchError):
    """File structure is internally inconsistent (truncation, bad sizes)."""


class ValidationError(BenchError):
    """Input violates a documented invariant."""


class DegenerateVectorError(ValidationError):
    """A vector that must be nonzero has zero norm."""


class ShapeError(ValidationError):
    """Array dimensions do not chain."""


class MissingIdError(ValidationError):
    """An id was not found in the table or catalog it must resolve in."""


class InvalidPairError(ValidationError):
    """A label pair is degenerate (identical in both tag and remainder)."""


class NumericError(BenchError):
    """Non-finite values where finite math is required."""
