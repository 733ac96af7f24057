"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class TabNCDError(Exception):
    exit_code = 1


class ConfigurationError(TabNCDError, ValueError):
    """Bad shapes, bad hyperparameters, malformed manifests."""

    exit_code = 2


class DataError(TabNCDError, ValueError):
    """Non-finite values, unusable files, classes too small to split."""

    exit_code = 3


class TrainingDivergedError(TabNCDError, FloatingPointError):
    exit_code = 4


class UsageError(TabNCDError, RuntimeError):
    """An API was called out of order (e.g. backward before forward)."""

    exit_code = 5


class LabelLeakError(UsageError):
    """Raised when code tries to read the ground truth of a hidden-label part."""
