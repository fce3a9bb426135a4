"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ParameterError(ValueError):
    """A hyperparameter or argument is outside its valid range."""


class StateError(RuntimeError):
    """An object is not in the state an operation requires."""


class EvaluationError(ArithmeticError):
    """A function produced a non-finite value."""


class DataError(ValueError):
    """Requested data is missing or inconsistent."""


class FormatError(DataError):
    """A binary file does not follow the expected record layout."""


class ConfigError(ValueError):
    """A run configuration is invalid."""
