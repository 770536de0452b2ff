"""Exception types shared across the package."""


class CollideNetError(Exception):
    """Base class for all package errors."""


class DimensionError(CollideNetError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(CollideNetError, ValueError):
    """A configuration value violates its contract."""


class UsageError(CollideNetError, RuntimeError):
    """An API was called in an invalid state (e.g. a second backward pass)."""


class NonFiniteError(CollideNetError, FloatingPointError):
    """An operation produced NaN or Inf."""


class InputError(CollideNetError, ValueError):
    """Malformed input data (empty video, wrong clip layout, ...)."""


class ParamError(CollideNetError, ValueError):
    """Invalid generator parameters."""


class DegenerateError(CollideNetError, ValueError):
    """A statistical procedure has no defined answer for this input."""


class LoadError(CollideNetError, ValueError):
    """A file could not be decoded, or does not match its configuration."""


class TrainingDiverged(CollideNetError, RuntimeError):
    """Training produced a non-finite loss."""
