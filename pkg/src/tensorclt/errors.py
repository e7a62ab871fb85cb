"""Exception and warning types shared across the package."""


class DomainError(ValueError):
    """Input outside the region where an operation is defined or guarded."""


class MeasureError(DomainError):
    """Invalid measure specification or non-finite integrand."""


class SizeGuardError(DomainError):
    """Requested a dense object beyond the configured size guard."""


class ConvergenceError(RuntimeError):
    """Iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class BranchError(ArithmeticError):
    """No root satisfies the Stieltjes sign condition ``Im f * Im z >= 0``."""


class ConsistencyError(RuntimeError):
    """A numerical invariant that should hold almost surely was violated."""


class PrecisionWarning(UserWarning):
    """A result is returned but failed an internal accuracy self-check."""
