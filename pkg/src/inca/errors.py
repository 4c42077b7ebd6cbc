"""Exception types raised across the toolkit."""


class IncaError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(IncaError):
    """Input data violates a structural contract."""


class UnknownEntity(ValidationError):
    """A panel references an entity id the topology does not know, or misses one it requires."""


class LengthMismatch(ValidationError):
    """Series lengths or panel coverage disagree."""


class NonMonotoneTimestamps(ValidationError):
    """Timestamps are not strictly increasing."""


class NonUniformGrid(ValidationError):
    """Timestamps are not on a shared uniform grid; resampling is not supported."""


class TooShort(IncaError):
    """A series or segment has too few observations for the operation."""


class LagTooLarge(IncaError):
    """The lag order leaves no effective samples."""


class NonFinite(IncaError):
    """A matrix contains NaN or infinite entries."""


class ShapeMismatch(IncaError):
    """Array shapes are inconsistent with the model dimensions."""


class NonFiniteLoss(IncaError):
    """The training objective evaluated to NaN or infinity."""


class EmptyGraph(IncaError):
    """All edge weights are zero; no walk can be defined."""


class NoConvergence(IncaError):
    """Iteration limit exceeded before reaching the requested tolerance."""


class TooFewPeaks(IncaError):
    """Not enough threshold excesses to fit a tail distribution."""


class InvalidCounts(IncaError):
    """Observation or peak counts are not positive."""


class EmptyTruth(IncaError):
    """A fault label has no ground-truth root causes."""
