"""Exception types shared across the toolkit."""


class FormatError(ValueError):
    """Base class for binary/text file format violations."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class FormatVersionError(FormatError):
    """File magic is valid but the version is unsupported."""


class TruncatedFileError(FormatError):
    """File ended before the declared payload was complete."""


class NonFiniteValueError(FormatError):
    """A NaN or infinity was found where only finite values are allowed."""


class ConfigError(ValueError):
    """A run configuration is malformed (unknown keys, missing fields)."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""
