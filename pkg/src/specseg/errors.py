"""Exception types raised across the toolkit.

Every error the library raises deliberately derives from SpecsegError so
callers (and the CLI exit-code mapping) can distinguish our failures from
genuine bugs.
"""


class SpecsegError(Exception):
    """Base class for all deliberate specseg errors."""


class ShapeMismatch(SpecsegError):
    """Operands have incompatible shapes."""


class NonPowerOfTwoLength(SpecsegError):
    """The fast transform path requires a power-of-two length."""


class LengthNotDivisible(SpecsegError):
    """Pooling window does not evenly divide the sequence length."""


class SingularCovariance(SpecsegError):
    """Batch covariance (plus epsilon) is not positive definite."""


class BatchTooSmall(SpecsegError):
    """Batch statistics need at least two samples per channel."""


class ConfigInvalid(SpecsegError):
    """A configuration value violates its contract."""


class TauOutOfRange(SpecsegError):
    """Binarization threshold must lie strictly inside (0, 1)."""


class UnsupportedModulation(SpecsegError):
    """Requested modulation scheme is not implemented."""


class PlacementInfeasible(SpecsegError):
    """Signals plus guard bands do not fit in the sampled band."""


class VersionMismatch(SpecsegError):
    """Dataset on disk was written with an unsupported format version."""


class CorruptRecord(SpecsegError):
    """A dataset record failed its length or checksum validation."""


class SplitMissing(SpecsegError):
    """Requested dataset split does not exist."""


class DatasetEmpty(SpecsegError):
    """Training requires non-empty train and validation splits."""


class FormatVersionMismatch(SpecsegError):
    """Checkpoint file has the wrong magic, version, or incompatible header."""


class ModeMismatch(FormatVersionMismatch):
    """Checkpoint field mode (complex/real) differs from what the caller needs."""


class CorruptBlob(SpecsegError):
    """Checkpoint payload failed its length or checksum validation."""
