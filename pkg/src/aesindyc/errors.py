"""Exception types shared across the package.

The CLI maps these onto exit codes (config 2, numeric 3, I/O 4).
"""


class AesindycError(Exception):
    pass


class ConfigError(AesindycError, ValueError):
    """Invalid configuration or degenerate input."""


class ShapeError(AesindycError, ValueError):
    """Array dimensions disagree with what an operation expects."""


class NumericError(AesindycError, ArithmeticError):
    """A non-finite value appeared in a computation."""

    def __init__(self, message, blocks=None):
        super().__init__(message)
        self.blocks = list(blocks or [])


class DivergenceError(NumericError):
    """The PDE solver produced a non-finite state."""

    def __init__(self, message, substep=None, step=None):
        super().__init__(message)
        self.substep = substep
        self.step = step


class CheckpointError(AesindycError, OSError):
    """Malformed, truncated or incompatible checkpoint file."""
