"""Exception taxonomy shared by all modules.

Rejection  -> a numerical precondition failed (CLI exit code 3).
ConfigError -> bad configuration / usage (CLI exit code 2).
"""


class Rejection(ValueError):
    """An operation rejected its input (non-finite data, masked node, ...)."""


class ConfigError(ValueError):
    """Invalid or inconsistent scenario configuration."""
