"""Exception types raised across the package."""


class FockstreamError(Exception):
    """Base class for all package errors."""


class DimensionError(FockstreamError, ValueError):
    pass


class CapabilityError(FockstreamError):
    """Requested order or size is beyond what the implementation supports."""


class DegenerateProfileError(FockstreamError, ValueError):
    pass


class NormalizationError(FockstreamError, ValueError):
    pass


class TruncationError(FockstreamError, ValueError):
    """Fock truncation is too small for the requested photon number."""


class OutcomeOutOfTruncationError(FockstreamError, ValueError):
    pass


class DeadTrajectoryError(FockstreamError):
    """Trajectory weight vanished; conditional quantities are undefined."""


class SingularityError(FockstreamError):
    pass


class PositivityViolationError(FockstreamError):
    """Detector intensity came out negative: the hierarchy is corrupted."""


class ImpossibleJumpError(FockstreamError):
    pass


class InstabilityError(FockstreamError):
    def __init__(self, message, suggested_dt=None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class StepSizeError(FockstreamError, ValueError):
    pass


class HorizonTooShortError(FockstreamError):
    def __init__(self, message, tail_bound=None):
        super().__init__(message)
        self.tail_bound = tail_bound


class ConfigError(FockstreamError, ValueError):
    pass
