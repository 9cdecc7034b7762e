"""Exception types shared across the package."""


class SparseLLMError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SparseLLMError, ValueError):
    """Operands have incompatible dimensions."""


class InvalidInputError(SparseLLMError, ValueError):
    """An input contains NaN/Inf or is otherwise unusable."""


class ConfigError(SparseLLMError, ValueError):
    """A configuration value is out of range, unknown, or inconsistent."""


class FormatError(SparseLLMError, ValueError):
    """A model/report container on disk is malformed."""


class NumericalError(SparseLLMError, RuntimeError):
    """A solver produced non-finite values."""
