"""Exception types raised across the package."""


class CdpError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(CdpError, ValueError):
    pass


class DegenerateInputError(CdpError, ValueError):
    pass


class InvalidConfigurationError(CdpError, ValueError):
    """A configuration is malformed or internally inconsistent.

    ``field`` names the offending entry when it is known.
    """

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class InsufficientDataError(CdpError, ValueError):
    pass


class TrainingDivergedError(CdpError, RuntimeError):
    pass


class CompatibilityError(CdpError, ValueError):
    """Checkpoint and configuration (or experiment kind) disagree."""


class CheckpointFormatError(CdpError, ValueError):
    pass
