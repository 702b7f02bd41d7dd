"""Shared exception types."""


class ConfigError(ValueError):
    """An experiment or attack configuration is inconsistent or incomplete."""
