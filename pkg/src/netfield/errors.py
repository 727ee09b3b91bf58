"""Shared error types mapped to CLI exit codes (2/4/5)."""


class ConfigError(ValueError):
    """Bad run configuration (unknown key, unparsable value)."""


class ContainerError(ValueError):
    """Corrupt or inconsistent container data."""


class ShapeMismatchError(ValueError):
    """Operands whose shapes are required to match do not."""
