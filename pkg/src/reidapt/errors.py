"""Exception types shared across the library."""


class ManifestError(ValueError):
    """Structural problem with a tracklet or manifest (bad dims, ids, values)."""


class DomainError(ValueError):
    """Operation undefined for the given camera topology (e.g. single camera)."""


class BatchError(ValueError):
    """A training batch violates the triplet-loss preconditions."""


class AdaptationError(RuntimeError):
    """Adaptation cannot proceed (no usable clusters to train on)."""


class MergeError(ValueError):
    """Merging domains produced no usable output or the inputs are unusable."""


class GenerationError(RuntimeError):
    """Synthetic domain generation failed (e.g. infeasible centroid packing)."""


class EvaluationError(ValueError):
    """Evaluation protocol violation (unlabeled tracklet, no relevant items)."""
