"""Exception types shared across the toolkit."""


class SplatSlamError(Exception):
    """Base class for all toolkit errors."""


class NonPositiveDepth(SplatSlamError):
    pass


class NonPositiveInverseDepth(SplatSlamError):
    pass


class DegenerateConfiguration(SplatSlamError):
    pass


class DimensionMismatch(SplatSlamError):
    pass


class BehindCamera(SplatSlamError):
    pass


class SingularSystem(SplatSlamError):
    pass


class ZeroVector(SplatSlamError):
    pass


class DuplicateId(SplatSlamError):
    pass


class UnknownKeyframe(SplatSlamError):
    pass


class EmptyStore(SplatSlamError):
    pass


class RecencyViolation(SplatSlamError):
    pass


class InvalidSpec(SplatSlamError):
    pass


class NoAssociations(SplatSlamError):
    pass


class MalformedIndex(SplatSlamError):
    pass


class MissingImage(SplatSlamError):
    pass


class IoError(SplatSlamError):
    pass


class ConfigError(SplatSlamError):
    pass


class EncoderUnavailable(SplatSlamError):
    pass
