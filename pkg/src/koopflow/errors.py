"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Bad user-facing configuration: unknown example id, degenerate grid,
    indivisible patch size, missing paths. Maps to CLI exit code 2."""


class CheckpointError(RuntimeError):
    """Corrupt or incompatible checkpoint/dataset file."""
