"""Exception taxonomy shared across the package."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or inconsistent."""


class InfeasibleConfigError(ConfigError):
    """A configuration is syntactically valid but cannot be realized,
    e.g. the antenna spacing constraint cannot be satisfied inside the region."""


class GeometryError(ValueError):
    """Degenerate scene geometry, e.g. a user placed exactly at a base station."""


class CheckpointError(RuntimeError):
    """A checkpoint file is truncated, has a bad magic, or an unsupported version."""


class TrainingDivergedError(RuntimeError):
    """A non-finite loss or gradient was produced; the update is aborted."""
