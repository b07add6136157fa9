"""Exception types raised across the package."""


class NudgelabError(Exception):
    """Base class for all package errors."""


class ValidationError(NudgelabError, ValueError):
    """An input violated a documented invariant."""


class ParseError(NudgelabError, ValueError):
    """A file could not be parsed; the message names the offending line."""


class ParameterError(NudgelabError, ValueError):
    """A configuration or hyperparameter value is outside its legal range."""


class OutOfRangeError(NudgelabError, IndexError):
    """A day index lies outside the available series range."""


class WindowNotFoundError(NudgelabError, LookupError):
    """No window met the accuracy target; carries the best available accuracy."""

    def __init__(self, message: str, best_accuracy: float, best_start: int):
        super().__init__(message)
        self.best_accuracy = best_accuracy
        self.best_start = best_start


class RejectedOrderError(NudgelabError):
    """An order was rejected (unaffordable); portfolio state is unchanged."""


class DivergenceError(NudgelabError, ArithmeticError):
    """Training produced a non-finite loss; the message names the epoch."""


class ConfigError(NudgelabError, ValueError):
    """An experiment or service configuration could not be resolved."""
