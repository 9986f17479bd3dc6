"""Exception hierarchy shared across the toolkit."""


class SegQCError(Exception):
    """Base class for every error raised by segqc."""


class InvalidMaskError(SegQCError, ValueError):
    pass


class ConfigurationError(SegQCError, ValueError):
    pass


class ShapeMismatchError(SegQCError, ValueError):
    pass


class UndefinedCorrelationError(SegQCError, ValueError):
    pass


class CoverageError(SegQCError, ValueError):
    pass


class JoinError(SegQCError, ValueError):
    pass


class GenerationError(SegQCError, ValueError):
    pass


class DataFormatError(SegQCError, ValueError):
    """A file on disk does not follow the expected format."""


class CheckpointError(DataFormatError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


class CheckpointConfigMismatchError(CheckpointError):
    """Parameter count or architecture does not match what the caller expects."""
