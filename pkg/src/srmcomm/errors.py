"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid configuration value, unknown preset, or malformed input file."""


class ModelError(ValueError):
    """Inconsistent or numerically invalid probabilistic motor model."""


class SolverError(RuntimeError):
    """The optimization problem could not be solved to the requested accuracy."""


class DesignError(RuntimeError):
    """A controller or commutation design step failed its own validity checks."""
