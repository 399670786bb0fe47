"""Exception hierarchy shared across the package.

Each category maps to one CLI message prefix and exit code (see cli.py).
"""


class TcdFernError(Exception):
    """Base class for all package errors."""


class StructuralError(TcdFernError):
    """Shape, dimension, or topology violation in otherwise valid data."""


class DataIntegrityError(TcdFernError):
    """Non-finite or out-of-range values in ingested data."""


class FormatError(TcdFernError):
    """Corrupt, truncated, or incompatible on-disk artifact."""


class ConfigError(TcdFernError):
    """Invalid, unknown, or inconsistent configuration setting."""


class AutodiffError(TcdFernError):
    """Misuse of the gradient tape (e.g. backward called twice)."""
