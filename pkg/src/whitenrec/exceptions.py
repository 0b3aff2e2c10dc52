"""Exception hierarchy shared across the package."""


class WhitenRecError(Exception):
    """Base class for all package errors."""


class ShapeError(WhitenRecError, ValueError):
    """Input has the wrong shape or does not match a fitted dimension."""


class NumericError(WhitenRecError, ArithmeticError):
    """A numerical routine failed (non-PD matrix, divergence, non-finite values)."""


class DegenerateInputError(WhitenRecError, ValueError):
    """Input is too small or degenerate for the requested computation."""


class ParseError(WhitenRecError, ValueError):
    """A data file is malformed. ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class ConfigError(WhitenRecError, ValueError):
    """A model or run configuration is invalid or incomplete."""


class EmptyEvaluationError(DegenerateInputError):
    """No user is left to evaluate."""


class CheckpointError(WhitenRecError):
    """A checkpoint file is malformed or was written by an incompatible version."""
