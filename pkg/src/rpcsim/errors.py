class ParameterError(ValueError):
    """A parameter lies outside its documented domain."""


class BudgetExceeded(ParameterError):
    """A construction would allocate more leaves than the configured budget."""


class NotPositiveSemidefinite(ValueError):
    def __init__(self, min_eigenvalue: float, tol: float):
        self.min_eigenvalue = min_eigenvalue
        self.tol = tol
        super().__init__(f"matrix is not PSD: min eigenvalue {min_eigenvalue:.3e} < -{tol:.1e}")


class InfeasibleError(ValueError):
    """A linear system has no admissible solution."""

    def __init__(self, message: str, residual: float | None = None, rank: int | None = None):
        self.residual = residual
        self.rank = rank
        super().__init__(message)
