"""Exception types shared across the package."""


class KwsError(Exception):
    """Base class for all errors raised by e2ekws."""


class InvalidArgumentError(KwsError, ValueError):
    pass


class PreconditionError(KwsError, RuntimeError):
    pass


class ConfigError(KwsError, ValueError):
    pass


class DataError(KwsError, ValueError):
    pass


class ModelFormatError(KwsError, ValueError):
    """Raised when a model file is truncated or corrupt.

    ``offset`` is the byte position at which decoding failed.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class UnsupportedVersionError(KwsError, ValueError):
    pass


class TrainingDivergedError(KwsError, RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NoOperatingPointError(KwsError, ValueError):
    pass
