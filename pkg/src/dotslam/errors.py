"""Exception hierarchy shared by all modules."""


class DotError(Exception):
    """Base class for all errors raised by this package."""


class NonPositiveDepth(DotError):
    pass


class OutOfBounds(DotError):
    pass


class ImageTooSmall(DotError):
    pass


class TooFewValidPoints(DotError):
    pass


class SingularSystem(DotError):
    """Normal equations too ill-conditioned to solve (unobservable motion)."""


class TrackingLost(DotError):
    pass


class DegenerateVariance(DotError):
    pass


class NotPositiveDefinite(DotError):
    pass


class NoValidProjections(DotError):
    pass


class DimensionMismatch(DotError):
    pass


class DecodeError(DotError):
    pass


class UnclassifiedTrack(DotError):
    pass


class LengthMismatch(DotError):
    pass


class DegenerateGeometry(DotError):
    pass


class SceneSpecError(DotError):
    pass


class ConfigError(DotError):
    pass
