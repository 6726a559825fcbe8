"""Exception types; the CLI maps each family to an exit code."""


class DagadError(Exception):
    pass


class ConfigError(DagadError, ValueError):
    """Invalid configuration or arguments (exit code 2)."""


class BundleError(DagadError, ValueError):
    """Malformed or inconsistent dataset bundle (exit code 3)."""


class NumericalError(DagadError, ArithmeticError):
    """Non-finite values during training or inference (exit code 4)."""


class CheckpointError(DagadError, ValueError):
    """Unreadable, corrupt or incompatible checkpoint (exit code 3)."""
