"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid imaging or run configuration."""


class SolverError(RuntimeError):
    """A linear solve failed (singular system or no convergence)."""


class DataError(ValueError):
    """Malformed or inconsistent input data file."""


class NumericalError(RuntimeError):
    """Non-finite values encountered during optimization."""
