"""Exception types raised across the package."""


class ShapeError(ValueError):
    """An array does not have the dimension an operation requires."""


class NonFiniteError(FloatingPointError):
    """A computation produced NaN or infinite values."""


class SupportError(ValueError):
    """The proposal density vanishes where the target has mass."""


class NormalizationError(ValueError):
    """An operation needs a normalized density but got an unnormalized one."""


class ContainmentViolation(RuntimeError):
    """A kernel failed to reach the requested accuracy within the step cap."""


class ConfigError(ValueError):
    """A run configuration is invalid or references unknown names."""


class TraceCorruptError(ValueError):
    """A stored trace file is missing, truncated or malformed."""
