"""Exception hierarchy."""


class SeqPasError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(SeqPasError, ValueError):
    """Invalid or unsupported configuration (CLI exit code 2)."""


class DomainError(SeqPasError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class NumericalError(SeqPasError, ArithmeticError):
    """An iterative method failed to converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class CoderError(SeqPasError):
    """Arithmetic or enumerative coder failure."""

    def __init__(self, message, position=None):
        super().__init__(message)
        self.position = position


class DecodeError(CoderError):
    """A symbol stream is inconsistent with the coder that should have produced it."""


class InvariantError(SeqPasError, AssertionError):
    """A runtime invariant check failed (CLI exit code 3)."""
