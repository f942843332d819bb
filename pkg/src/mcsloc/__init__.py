"""MCS detection from raw I/Q with a dilated residual CNN, and indoor
localization by matching detected MCS values against a per-tile MCS map."""

from mcsloc.errors import (
    ConfigError,
    DomainError,
    FormatError,
    McsLocError,
    ShapeError,
    TrainingError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DomainError",
    "FormatError",
    "McsLocError",
    "ShapeError",
    "TrainingError",
    "ValidationError",
]
