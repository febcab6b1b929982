"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Vector or matrix shapes do not agree."""


class ParseError(ValueError):
    """Malformed input file; the message names the offending line."""

    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: " if path is not None else f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line = line
        self.path = path


class ShiftError(ValueError):
    """The shift does not make lambda*I - A^T A positive definite."""


class OrthogonalStartError(ValueError):
    """The vector has no component along the top eigenvector."""


class DivergedError(ArithmeticError):
    """An iterative solver produced a non-finite or exploding iterate."""

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class StalledError(RuntimeError):
    """Burn-in did not reach the warm-start region within its round budget."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class EstimationFailedError(RuntimeError):
    """Shift estimation hit its iteration guard without exiting."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class BudgetExceededError(RuntimeError):
    """A sample or gradient budget ran out."""

    def __init__(self, message, used=None, cap=None, partial=None):
        super().__init__(message)
        self.used = used
        self.cap = cap
        self.partial = partial


class StreamExhaustedError(RuntimeError):
    """A one-pass file stream was read past its end."""


class GapFreeRequiredError(ValueError):
    """The requested accuracy is not below the eigengap."""
