"""Exception hierarchy. Each error carries a short machine-readable ``reason``."""


class ConeSamplerError(Exception):
    exit_code = 5

    def __init__(self, reason, message=None):
        self.reason = reason
        self.detail = message or ""
        super().__init__(f"{reason}: {message}" if message else reason)


class DegenerateInputError(ConeSamplerError, ValueError):
    """Input violates a geometric precondition (zero norm, d < 2, ...)."""

    exit_code = 3


class InputFormatError(ConeSamplerError, ValueError):
    """A file on disk is malformed or inconsistent with its companions."""

    exit_code = 3


class InfeasibleConfigError(ConeSamplerError, ValueError):
    exit_code = 4


class SamplingError(ConeSamplerError, RuntimeError):
    """Random draws kept degenerating; points at a broken generator."""

    exit_code = 5


class UndefinedMetricError(ConeSamplerError, ValueError):
    exit_code = 4
