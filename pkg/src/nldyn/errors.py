"""Exception classes shared across the toolkit.

Each class carries the process exit code the command line maps it to.
"""


class ToolkitError(Exception):
    """Base class for all toolkit failures."""

    exit_code = 1


class ConfigurationError(ToolkitError):
    """Invalid configuration value, file content, or construction parameter."""


class UsageError(ToolkitError):
    """An operation was called outside its contract (wrong grid, empty input)."""


class ResourceError(ToolkitError):
    """A requested allocation exceeds the configured cap."""


class HypothesisError(ToolkitError):
    """A declared model hypothesis failed verification."""

    exit_code = 2


class NumericalError(ToolkitError):
    """A computation produced non-finite values."""

    exit_code = 3


class DiagnosticError(ToolkitError):
    """A simulation diagnosed behaviour outside the predicted contract."""

    exit_code = 4


class OutputError(ToolkitError):
    """Reading inputs or writing result artifacts failed."""

    exit_code = 5
