"""Shared exception types."""


class ValidationError(ValueError):
    """An input violates a documented precondition or invariant."""


class TrajectoryLengthError(ValidationError):
    """A trajectory is shorter than the operation's minimum length."""


class ConfigError(ValueError):
    """A configuration value or file is inconsistent or unknown."""


class ParseError(ValueError):
    """A persisted file failed to parse.

    Carries the 1-based line number of the offending record.
    """

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class NumericError(RuntimeError):
    """A numerical operation failed (e.g. a factorization that should succeed)."""


class LowConfidenceWeight(RuntimeError):
    """Total similarity weight too small to trust the local moment estimate."""
