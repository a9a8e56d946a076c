"""Exception hierarchy shared by all modules.

Each class carries the CLI exit code it maps to.
"""


class OperatrackError(Exception):
    exit_code = 1


class ConfigError(OperatrackError, ValueError):
    """Invalid configuration or parameters (sample rate, window sizes, paths)."""

    exit_code = 2


class InputFormatError(OperatrackError, ValueError):
    """Malformed or unreadable input data."""

    exit_code = 3


class TrackingLost(OperatrackError, RuntimeError):
    """The accumulated-cost window holds no finite cell."""

    exit_code = 4
