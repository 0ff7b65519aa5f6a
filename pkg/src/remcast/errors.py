"""Package error types, mapped to CLI exit codes (data = 2, numerical = 3)."""


class DataError(Exception):
    """Missing, malformed, or degenerate input data."""


class NumericalError(Exception):
    """Numerical failure: diverged training, singular systems, NaN losses."""
