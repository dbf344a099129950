"""Adaptive independent Metropolis-Hastings with normalizing-flow proposals."""
from .exceptions import (
    ConfigError,
    ContainmentViolation,
    NonFiniteError,
    NormalizationError,
    ShapeError,
    SupportError,
    TraceCorruptError,
)
from .estimators import AdaptiveIMHSampler

__version__ = "0.1.0"

__all__ = [
    "AdaptiveIMHSampler",
    "ConfigError",
    "ContainmentViolation",
    "NonFiniteError",
    "NormalizationError",
    "ShapeError",
    "SupportError",
    "TraceCorruptError",
]
