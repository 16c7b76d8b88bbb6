"""Exit codes and exception types shared across the package."""

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_MISSING_FILE = 2
EXIT_SCHEMA_VERSION = 3
EXIT_CHECKPOINT_MISMATCH = 4
EXIT_BAD_CONFIG = 5


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class SchemaVersionError(ValueError):
    """A data file declares an unsupported schema version."""


class CheckpointMismatchError(ValueError):
    """Checkpoint parameters disagree with the declared architecture."""


class CollapseError(RuntimeError):
    """Embedding training collapsed to a near-constant map."""
