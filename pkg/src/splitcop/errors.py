"""Exception hierarchy.  The CLI maps each class to an exit code."""


class SplitcopError(Exception):
    exit_code = 1


class ParameterError(SplitcopError, ValueError):
    """Argument outside its mathematical domain."""

    exit_code = 2


class InputError(SplitcopError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 2


class NumericalError(SplitcopError, ArithmeticError):
    """A computation failed to produce a finite or converged result."""

    exit_code = 3

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ConfigError(SplitcopError, ValueError):
    exit_code = 4
