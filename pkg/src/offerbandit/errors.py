"""Shared exception types."""


class ConfigError(ValueError):
    """An invalid configuration value or unknown configuration key."""
