"""Exception types shared across the package."""


class LatentMorphError(Exception):
    """Base class for all package errors."""


class DimensionError(LatentMorphError, ValueError):
    pass


class ConfigError(LatentMorphError, ValueError):
    pass


class DomainError(LatentMorphError, ValueError):
    pass


class PreconditionError(LatentMorphError, ValueError):
    pass


class NumericError(LatentMorphError, ArithmeticError):
    pass


class CheckpointError(LatentMorphError):
    pass


class CheckpointParseError(CheckpointError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class UnsupportedVersionError(CheckpointError):
    def __init__(self, found, supported):
        super().__init__(
            f"unsupported checkpoint version {found}; this build reads version {supported}"
        )
        self.found = found
        self.supported = supported


class TrainingDiverged(LatentMorphError):
    """Raised when a loss goes non-finite; carries the last good checkpoint."""

    def __init__(self, iteration, checkpoint):
        super().__init__(f"training diverged at iteration {iteration}")
        self.iteration = iteration
        self.checkpoint = checkpoint
