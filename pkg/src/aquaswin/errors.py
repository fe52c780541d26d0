"""Exception hierarchy shared across the package."""


class AquaswinError(Exception):
    """Base class for all package errors."""


class ShapeError(AquaswinError):
    """Tensor dimensions violate an operation's contract."""


class ConfigError(AquaswinError):
    """Invalid model, training, or data configuration."""


class ContractError(AquaswinError):
    """A runtime precondition or numerical contract was violated."""


class PpmError(AquaswinError):
    """Malformed or unreadable PPM file."""


class PairingError(AquaswinError):
    """Dataset directories contain unmatched image files."""


class CheckpointError(AquaswinError):
    """Base class for checkpoint load failures."""


class CheckpointMagicError(CheckpointError):
    """File does not start with the expected magic bytes."""


class CheckpointVersionError(CheckpointError):
    """Unsupported checkpoint format version."""


class CheckpointTruncatedError(CheckpointError):
    """Checkpoint ends before all declared data was read."""


class CheckpointDimError(CheckpointError):
    """Declared tensor dimensions are implausible for this file."""
