"""Exception types shared across the package."""


class FfnbError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(FfnbError):
    """Array has the wrong shape, or shapes are mutually inconsistent."""


class NumericError(FfnbError):
    """Array contains NaN or infinite entries."""


class SingularMatrixError(FfnbError):
    """Matrix is not positive definite (or otherwise not invertible)."""


class EmptyNullSpaceError(FfnbError):
    """Retained subspace fills the whole space; no residual directions left."""


class FrozenUpdateError(FfnbError):
    """Attempt to modify a band or classifier that has been frozen."""


class StreamFormatError(FfnbError):
    """Task stream file is malformed or violates stream invariants."""


class ConfigError(FfnbError):
    """Run configuration failed validation."""


class CheckpointError(FfnbError):
    """Checkpoint file is corrupt, truncated, or from an unknown format version."""
