"""Exception types shared across the package.

User-facing problems (bad files, bad configuration) and runtime failures
(non-convergence, infeasible subproblems) are kept in separate branches so
the command-line layer can map them to distinct exit codes.
"""


class StratCoxError(Exception):
    """Base class for all package-specific errors."""


class SchemaError(StratCoxError):
    """A required column is missing, duplicated, or otherwise unusable."""


class DataError(StratCoxError):
    """A row of input data failed validation.

    Carries the 1-based physical line number of the offending row when the
    data came from a file.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(StratCoxError):
    """Invalid run configuration (fold counts, grids, thresholds, paths)."""


class FitError(StratCoxError):
    """Base class for failures that occur while fitting or solving."""


class ConvergenceError(FitError):
    """An iterative fit failed to converge within its iteration budget."""


class InfeasibleError(FitError):
    """A quadratic program (or a set of them) has no feasible point."""

    def __init__(self, message, rows=None):
        super().__init__(message)
        self.rows = tuple(rows) if rows is not None else ()


class DegenerateVarianceError(FitError):
    """A requested variance estimate is zero or negative."""
