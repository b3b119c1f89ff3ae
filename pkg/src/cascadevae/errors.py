"""Shared exception types."""


class ConfigError(ValueError):
    """Inconsistent or unknown configuration values."""


class FormatError(ValueError):
    """Malformed persisted artifact (dataset file, checkpoint, instance text)."""


class MetricError(ValueError):
    """A metric is undefined for the given inputs."""
