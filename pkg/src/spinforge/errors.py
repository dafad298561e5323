"""Exception hierarchy."""


class SpinforgeError(Exception):
    """Base class for all package errors."""


class ValidationError(SpinforgeError, ValueError):
    """Invalid input value. ``path`` names the offending field when known."""

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class NumericalConsistencyError(SpinforgeError, ArithmeticError):
    pass


class ParseError(SpinforgeError, ValueError):
    """Source text could not be parsed; ``line`` and ``column`` are 1-based."""

    def __init__(self, message, line=1, column=1):
        self.line = line
        self.column = column
        self.message = message
        super().__init__(f"line {line}, column {column}: {message}")


class UnsupportedConfigurationError(ValidationError):
    pass


class PlanningError(SpinforgeError):
    def __init__(self, message, couplings=()):
        self.couplings = tuple(couplings)
        super().__init__(message)


class RoutingError(SpinforgeError):
    pass


class NonUnitaryError(SpinforgeError):
    pass


class PreparationError(SpinforgeError):
    pass


class UnsupportedError(SpinforgeError):
    pass


class IncompleteTableError(SpinforgeError):
    pass
