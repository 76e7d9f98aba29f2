class FinregError(Exception):
    """Base class for library errors."""


class DataError(FinregError, ValueError):
    """Malformed input data; carries optional row/column location."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class InfeasibleError(FinregError, ValueError):
    """Derivatives requested at a parameter with an empty observed interval."""


class NumericalError(FinregError, ArithmeticError):
    """Solver or factorisation failure."""


class PenalizedFitError(FinregError, ValueError):
    """Likelihood-based inference requested for a penalized fit."""
