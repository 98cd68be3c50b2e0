"""Exception hierarchy shared across the engine.

Exit-code mapping for the CLI lives in ``vitforge.cli``: configuration and
usage problems exit 1, data/format problems exit 2, numerical failures exit 3.
"""


class VitforgeError(Exception):
    """Base class for all engine errors."""


class DimensionError(VitforgeError):
    """Tensor shapes are incompatible with the requested operation."""


class ContractError(VitforgeError):
    """An API precondition was violated (e.g. backward on a non-scalar)."""


class ConfigError(VitforgeError):
    """Invalid configuration value or command-line usage."""


class DataError(VitforgeError):
    """Dataset contents are missing, malformed, or inconsistent."""


class SplitError(DataError):
    """A class is too small to honor the train/test split rules."""


class LabelError(DataError):
    """A label is outside the valid class-id range."""


class UndefinedMetricError(VitforgeError):
    """A metric has no defined value for the given inputs (0/0 cases)."""


class NumericalError(VitforgeError):
    """A computation produced non-finite values at runtime."""


class CheckpointError(VitforgeError):
    """Base class for checkpoint container failures."""


class FormatError(CheckpointError):
    """The file does not start with the expected magic bytes."""


class VersionError(CheckpointError):
    """The container version is not supported by this reader."""


class CorruptionError(CheckpointError):
    """The file ended or became inconsistent mid-entry."""


class ManifestError(CheckpointError):
    """Named tensors do not match the model configuration's manifest."""
