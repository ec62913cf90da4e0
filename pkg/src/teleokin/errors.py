"""Exception types shared across the package.

Decode errors (``BadMagic`` .. ``DegenerateQuaternion``) signal a frame that
must be discarded, never a crash; loaders raise ``ParseError`` /
``ValidationError`` with enough context to point at the offending line.
"""

from __future__ import annotations


class TeleokinError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateQuaternion(TeleokinError):
    """Quaternion norm too small to represent a rotation (corrupt data)."""


class DimensionMismatch(TeleokinError):
    """A vector's length does not match the model's joint count."""


class ParseError(TeleokinError):
    """Syntax error in a config document or binary stream."""

    def __init__(self, line: int, column: int, message: str):
        self.line = line
        self.column = column
        self.message = message
        super().__init__(f"line {line}, col {column}: {message}")


class ValidationError(TeleokinError):
    """A named semantic constraint was violated in a loaded document."""


class CoverageError(ValidationError):
    """Retarget map does not cover the robot's joints exactly once."""


class UnknownReference(ValidationError):
    """A document refers to a segment, link, joint, or sphere that does not exist."""


class BadMagic(TeleokinError):
    """Frame does not start with the expected magic bytes."""


class UnsupportedVersion(TeleokinError):
    """Frame carries a protocol version this codec does not speak."""


class TruncatedFrame(TeleokinError):
    """Frame is shorter (or longer) than its header declares."""


class CrcMismatch(TeleokinError):
    """Frame checksum does not match its payload."""


class EmptyRecording(TeleokinError):
    """A recording with zero frames cannot be replayed."""


class SinkBackpressure(TeleokinError):
    """A sink exceeded its time budget for too many consecutive cycles.

    Carries the loop metrics collected up to the abort in ``metrics``.
    """

    def __init__(self, message: str, metrics=None):
        self.metrics = metrics
        super().__init__(message)


class EmptyTrace(TeleokinError):
    """A trace with zero commands cannot be validated."""


class ShapeMismatch(TeleokinError):
    """Two traces differ in length or joint count and cannot be compared."""
