"""Exception types shared across the package."""

from __future__ import annotations


class EndosimError(Exception):
    """Base class for all package-specific errors."""


class ParseError(EndosimError):
    """Raised on malformed model/scenario text.

    Carries the 1-based line and column of the offending token.
    """

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class ValidationError(EndosimError):
    """Raised when an operation requires a valid model/scenario and gets
    one with violations, or when inputs are structurally malformed."""


class ModelMismatchError(EndosimError):
    """Raised when a condition, change set, or query references an
    attribute or value the model does not declare."""


class EngineInvariantError(EndosimError):
    """Raised when simulation reaches a state the model rules forbid
    (e.g. a transition past the end of a value order)."""


class UnsupportedModelError(EndosimError):
    """Raised by the exact oracle on inputs outside its documented scope."""


class SessionExhaustedError(EndosimError):
    """Raised when extending a session in which every trial has zero weight."""


class TimeOrderError(EndosimError):
    """Raised when an extension fragment starts at or before the session
    horizon, or a timeline is not strictly increasing."""
