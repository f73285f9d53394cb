"""Exception types shared across the toolkit.

The CLI maps these onto its exit-code contract (2 = config, 3 = missing
artifact, 4 = runtime), so library code should raise the most specific one.
"""


class ConfigError(ValueError):
    """A configuration value or config file is invalid."""


class ContractError(ValueError):
    """An operation was called with arguments violating its contract."""


class ShapeError(ContractError):
    """Array/tensor shapes do not match what the operation requires."""


class IngestionError(RuntimeError):
    """A dataset directory could not be loaded."""


class MissingArtifactError(FileNotFoundError):
    """An upstream artifact (checkpoint, dataset, partition) does not exist."""
