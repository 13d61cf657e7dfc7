"""Shared exception types; the CLI maps them to exit codes."""


class GainImputeError(Exception):
    """Base class for package errors."""


class ConfigError(GainImputeError):
    """Invalid configuration file or CLI arguments (exit code 2)."""


class DataError(GainImputeError):
    """Malformed or insufficient input data (exit code 3)."""
