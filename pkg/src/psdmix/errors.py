"""Exception types raised by psdmix."""


class PsdmixError(Exception):
    """Base class for all psdmix errors."""


class ParameterError(PsdmixError, ValueError):
    """Invalid distribution, grid or sampler parameters."""


class ConfigError(PsdmixError):
    """Malformed or inconsistent run configuration."""


class NumericalFailure(PsdmixError, ArithmeticError):
    """A sampler produced a non-finite state.

    ``state`` holds whatever diagnostic snapshot the sampler could collect.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state or {}


class StageError(PsdmixError):
    """Failure inside one pipeline stage; ``stage`` names it."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
