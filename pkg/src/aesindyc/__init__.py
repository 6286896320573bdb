"""Dyna-style PPO for Burgers' equation with an autoencoder + sparse dictionary surrogate."""

__version__ = "0.1.0"

from .errors import AesindycError, CheckpointError, ConfigError, DivergenceError, NumericError, ShapeError

__all__ = [
    "AesindycError",
    "CheckpointError",
    "ConfigError",
    "DivergenceError",
    "NumericError",
    "ShapeError",
    "__version__",
]
