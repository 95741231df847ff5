"""Exception hierarchy shared across the package."""


class CoxhoaError(Exception):
    """Base class for all package errors."""


class DataError(CoxhoaError):
    """Invalid input data or configuration (CLI exit code 2)."""


class FitError(CoxhoaError):
    """Numerical failure while maximizing a likelihood (CLI exit code 3)."""


class SimulationError(CoxhoaError):
    """Infeasible or failed simulation request (CLI exit code 3)."""


class AdjustmentError(CoxhoaError):
    """Second-order adjustment undefined for these inputs (CLI exit code 3).

    Carries a ``diagnostics`` dict so callers can decide whether to fall
    back to first-order inference.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
