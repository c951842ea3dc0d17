"""Exception and warning types shared across the package."""


class RealGenError(Exception):
    """Base class for all package-specific errors."""


class FormatError(RealGenError):
    """A file on disk does not match the expected format."""

    def __init__(self, message, record_index=None):
        if record_index is not None:
            message = f"record {record_index}: {message}"
        super().__init__(message)
        self.record_index = record_index


class EmptyScenario(RealGenError):
    """A scenario ended up with no valid agents."""


class PlacementError(RealGenError):
    """Agents could not be placed without initial overlap."""


class DimensionMismatch(RealGenError):
    """Point sets have incompatible embedding dimensions."""


class SizeLimit(RealGenError):
    """Input exceeds the size supported by an exact algorithm."""


class ShapeError(RealGenError):
    """Tensor shapes are inconsistent with the model configuration."""


class VersionMismatch(RealGenError):
    """Checkpoint format or configuration disagrees with expectations."""


class FingerprintError(RealGenError):
    """Artifacts produced by different encoder checkpoints were mixed."""


class KTooLarge(RealGenError):
    """K exceeds the number of available index entries."""


class TagNotFound(RealGenError):
    """No index entry carries a requested tag."""


class AllMasked(RealGenError):
    """A masked reduction has no valid entries."""


class BatchTooSmall(RealGenError):
    """The contrastive loss needs at least two scenarios per batch."""


class DegenerateLabels(RealGenError):
    """Fewer than two classes in a classification task."""


class EmptyRetrieval(RealGenError):
    """Retrieval produced no scenarios to combine."""


class SinkhornConvergenceWarning(UserWarning):
    """Dual updates did not reach tolerance; the last iterate was returned."""
