"""Exception hierarchy shared across the package.

The CLI maps these onto distinct process exit codes, so raising the
right class matters for scripting.
"""


class DeepTransportError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(DeepTransportError):
    """Bad or inconsistent run configuration."""

    exit_code = 2


class DataError(DeepTransportError):
    """Malformed input data: graphs, condition series, checkpoints."""

    exit_code = 3


class NumericalError(DeepTransportError):
    """Non-finite values or numerically degenerate computations."""

    exit_code = 4
