"""Exception hierarchy for the ``orim`` package."""


class OrimError(Exception):
    """Base class for all errors raised by this package."""


class PreconditionError(OrimError, ValueError):
    """An input violates a documented precondition."""


class FactorizationError(OrimError, ArithmeticError):
    """A dense factorization failed (no convergence, loss of definiteness)."""


class NotPositiveDefiniteError(FactorizationError):
    """Cholesky factorization hit a non-positive pivot.

    Attributes
    ----------
    index : int
        Zero-based index of the offending leading minor.
    """

    def __init__(self, index, message=None):
        self.index = index
        if message is None:
            message = f"matrix is not positive definite (pivot {index} <= 0)"
        super().__init__(message)


class ConvergenceError(OrimError, RuntimeError):
    """An iterative method failed to produce a usable iterate."""
