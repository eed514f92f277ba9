"""
Exception types for Multi-PFA.
Numeric precondition violations raise plain ValueError; these classes mark
failures the CLI maps to exit codes.
"""


class MultiPFAError(Exception):
    """Base class for all Multi-PFA failures."""

    exit_code = 1


class DatasetError(MultiPFAError, ValueError):
    """Input data violates a Dataset invariant."""

    exit_code = 2


class ConfigError(MultiPFAError, ValueError):
    """Invalid run options or simulation config."""

    exit_code = 2


class InputOutputError(MultiPFAError, OSError):
    """A file could not be read or written."""

    exit_code = 3
