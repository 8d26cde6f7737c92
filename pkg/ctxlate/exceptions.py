"""Exception hierarchy shared by every ctxlate sub-package."""


class CTXlateError(Exception):
    """Base class of all ctxlate errors."""


class VolumeFormatError(CTXlateError, ValueError):
    """A volume sidecar or payload does not match the on-disk contract."""


class DegenerateInputError(CTXlateError, ValueError):
    """Input carries no information for the requested operation."""


class ConfigurationError(CTXlateError, ValueError):
    """Invalid configuration value, key or combination."""


class CheckpointError(CTXlateError, RuntimeError):
    """Unreadable, corrupt or incompatible checkpoint file."""


class TrainingFaultError(CTXlateError, RuntimeError):
    """A training step produced a non-finite loss.

    Parameters
    ----------
    message : str
    breakdown : LossBreakdown or None
        Per-term values of the failing step.
    """

    def __init__(self, message, breakdown=None):
        super().__init__(message)
        self.breakdown = breakdown
