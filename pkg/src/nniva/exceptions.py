"""Exception types shared across the package."""


class ParameterError(ValueError):
    """Invalid argument, shape or configuration."""


class NumericError(ArithmeticError):
    """Non-finite or singular intermediate encountered."""


class FormatError(ValueError):
    """Malformed or inconsistent file on disk."""
