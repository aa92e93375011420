"""Exception types shared across the package.

The CLI maps each class to a process exit status.
"""


class CWChainError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(CWChainError, ValueError):
    """Invalid model, window, or solver parameters."""

    exit_code = 2


class ConvergenceError(CWChainError, RuntimeError):
    """An iterative solver did not reach its tolerance."""

    exit_code = 3

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class PrecisionError(CWChainError, ArithmeticError):
    """The working precision is too low for the requested measurement."""

    exit_code = 4
