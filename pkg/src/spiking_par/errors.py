"""Exception types shared across the package.

Each class carries the process exit code the CLI uses when it escapes a
command: 1 for usage/config problems, 2 for data and integrity problems.
Grad-check failures (exit 3) are reported by the CLI itself, not raised.
"""


class SpikingParError(Exception):
    """Base class for every error this package raises on purpose."""

    exit_code = 1


class ConfigError(SpikingParError, ValueError):
    """Invalid configuration value, config file line, or CLI override."""


class DimensionError(SpikingParError, ValueError):
    """Tensor shapes do not satisfy an operation's contract."""


class EngineUsageError(SpikingParError, RuntimeError):
    """The autodiff engine or a layer was driven outside its contract."""


class DataIntegrityError(SpikingParError):
    """On-disk data is malformed, truncated, missing, or inconsistent."""

    exit_code = 2


class ValidationError(SpikingParError, ValueError):
    """Inputs to a loss or metric violate their domain (e.g. non-binary labels)."""

    exit_code = 2


class EvaluationError(SpikingParError):
    """A metric is undefined under strict evaluation rules."""

    exit_code = 2
