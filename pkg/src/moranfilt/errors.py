"""Exception hierarchy.

Validation problems subclass :class:`ValueError` so callers can treat them as
bad input; numerical breakdowns subclass :class:`NumericalError`.
"""


class MoranfiltError(Exception):
    """Base class for all package errors."""


class ParameterError(MoranfiltError, ValueError):
    """An argument is out of its admissible range."""


class DomainError(MoranfiltError, ValueError):
    """A mathematical function was evaluated outside its domain."""


class DenseCapError(ParameterError):
    """Refusing to materialize an n x n matrix above the dense cap."""


class NumericalError(MoranfiltError, ArithmeticError):
    """A numerical stage failed (factorization, optimization, rank)."""

    stage = "numerical"


class DegenerateError(NumericalError):
    stage = "degenerate input"


class CollinearityError(NumericalError):
    stage = "least squares"

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = list(columns)


class ConvergenceError(NumericalError):
    stage = "optimization"

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
