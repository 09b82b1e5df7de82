"""Core data types: tracklets, domain manifests, cluster assignments, configs.

A *tracklet* is one person track observed by one camera, represented by the
per-frame feature vectors extracted for it.  A *domain manifest* is the full
set of tracklets for one deployment site (one "domain").  Everything in this
module is immutable after construction; operations that transform data return
new objects.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ManifestError

# A feature vector is a plain 1-D float64 ndarray.  Kept as an alias so
# signatures can say what they mean.
FeatureVector = np.ndarray


def _as_frame_matrix(frames) -> np.ndarray:
    """Normalize raw frame data to a read-only (n_frames, dim) float64 array."""
    if isinstance(frames, np.ndarray) and frames.dtype == np.float64 and frames.ndim == 2:
        arr = frames.copy()
    else:
        try:
            arr = np.array(frames, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ManifestError(f"frames are not a rectangular numeric array: {exc}") from exc
        if arr.size == 0:
            arr = arr.reshape(0, 0)
        if arr.ndim != 2:
            raise ManifestError(
                f"frames must be a sequence of equal-length vectors, got shape {arr.shape}"
            )
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Tracklet:
    """One single-camera person track.

    Attributes:
        tracklet_id: unique id within a manifest.
        camera_id: id of the camera that recorded the track.
        frames: (n_frames, dim) float64 matrix, one feature vector per frame.
        identity: ground-truth person label, or None for unlabeled data.
            The clustering path never reads this field.
    """

    tracklet_id: str
    camera_id: str
    frames: np.ndarray
    identity: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "frames", _as_frame_matrix(self.frames))

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Tracklet):
            return NotImplemented
        return (
            self.tracklet_id == other.tracklet_id
            and self.camera_id == other.camera_id
            and self.identity == other.identity
            and self.frames.shape == other.frames.shape
            and np.array_equal(self.frames, other.frames)
        )

    def __repr__(self):
        return (
            f"Tracklet({self.tracklet_id!r}, camera={self.camera_id!r}, "
            f"frames={self.frames.shape}, identity={self.identity!r})"
        )


@dataclass(frozen=True, eq=False)
class DomainManifest:
    """All tracklets of one domain, in insertion order."""

    name: str
    tracklets: tuple[Tracklet, ...]

    def __post_init__(self):
        object.__setattr__(self, "tracklets", tuple(self.tracklets))

    @cached_property
    def by_id(self) -> dict[str, Tracklet]:
        # On duplicate ids the last occurrence wins; validate_manifest reports
        # the duplication itself.
        return {t.tracklet_id: t for t in self.tracklets}

    @cached_property
    def cameras(self) -> tuple[str, ...]:
        return tuple(sorted({t.camera_id for t in self.tracklets}))

    @cached_property
    def identities(self) -> tuple[str, ...]:
        return tuple(sorted({t.identity for t in self.tracklets if t.identity is not None}))

    @property
    def dim(self) -> int | None:
        """Feature dimensionality, taken from the first tracklet with frames."""
        for t in self.tracklets:
            if t.n_frames > 0:
                return t.dim
        return None

    def __len__(self):
        return len(self.tracklets)

    def __eq__(self, other):
        if not isinstance(other, DomainManifest):
            return NotImplemented
        return self.name == other.name and self.tracklets == other.tracklets

    def __repr__(self):
        return (
            f"DomainManifest({self.name!r}, tracklets={len(self.tracklets)}, "
            f"cameras={len(self.cameras)})"
        )


@dataclass(frozen=True)
class ClusterAssignment:
    """One cluster: a non-negative id and the tracklet ids it contains."""

    cluster_id: int
    members: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "members", frozenset(self.members))
        if self.cluster_id < 0:
            raise ValueError("cluster_id must be non-negative")


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of validate_manifest: empty violations means the manifest is usable."""

    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for v in self.violations:
            out[v.kind] = out.get(v.kind, 0) + 1
        return out


def validate_manifest(m: DomainManifest) -> ValidationReport:
    """Check manifest invariants, reporting violations instead of raising.

    Reported kinds: empty-manifest, duplicate-id, empty-frames, non-finite,
    dim-mismatch.  One violation per offending tracklet (one per duplicated
    id), so counts are stable for tests and tooling.
    """
    violations: list[Violation] = []
    if not m.tracklets:
        violations.append(Violation("empty-manifest", "manifest has no tracklets"))
        return ValidationReport(tuple(violations))

    counts: dict[str, int] = {}
    for t in m.tracklets:
        counts[t.tracklet_id] = counts.get(t.tracklet_id, 0) + 1
    for tid in sorted(tid for tid, c in counts.items() if c > 1):
        violations.append(
            Violation("duplicate-id", f"tracklet id {tid!r} appears {counts[tid]} times")
        )

    ref_dim = m.dim
    for t in m.tracklets:
        if t.n_frames == 0:
            violations.append(
                Violation("empty-frames", f"tracklet {t.tracklet_id!r} has no frames")
            )
            continue
        if not np.isfinite(t.frames).all():
            violations.append(
                Violation("non-finite", f"tracklet {t.tracklet_id!r} contains NaN or Inf")
            )
        if ref_dim is not None and t.dim != ref_dim:
            violations.append(
                Violation(
                    "dim-mismatch",
                    f"tracklet {t.tracklet_id!r} has dim {t.dim}, manifest dim {ref_dim}",
                )
            )
    return ValidationReport(tuple(violations))


def _exact_mean(rows: np.ndarray) -> np.ndarray:
    # Compensated per-coordinate summation: exact up to the final rounding,
    # hence independent of frame order.
    n = rows.shape[0]
    return np.array([math.fsum(col) / n for col in rows.T], dtype=np.float64)


def tracklet_embedding(t: Tracklet) -> FeatureVector:
    """Mean of the tracklet's frame vectors.

    Frame order does not affect the result: each coordinate is reduced with
    compensated summation.
    """
    if t.n_frames == 0:
        raise ManifestError(f"tracklet {t.tracklet_id!r} has no frames")
    if not np.isfinite(t.frames).all():
        raise ManifestError(f"tracklet {t.tracklet_id!r} contains non-finite values")
    return _exact_mean(t.frames)


def manifest_embeddings(
    m: DomainManifest,
    embedder=None,
    normalize: bool = False,
) -> tuple[tuple[str, ...], np.ndarray]:
    """Per-tracklet representations for a whole manifest.

    Each tracklet is represented by the mean of its (optionally embedded)
    frame vectors.  Tracklets are returned in ascending tracklet_id order,
    which is the canonical order used by the neighbor index.

    Args:
        m: manifest; every tracklet must have at least one finite frame.
        embedder: optional object with an ``embed(x)`` method mapping a
            (n, dim_in) batch to (n, dim_out).  None means raw frames.
        normalize: if True, scale each representation to unit L2 norm
            (zero vectors are left untouched).  Off by default.

    Returns:
        (ids, X): ids sorted ascending, X of shape (len(ids), dim).
    """
    order = sorted(m.tracklets, key=lambda t: t.tracklet_id)
    if not order:
        raise ManifestError("manifest has no tracklets")
    reps = []
    for t in order:
        if t.n_frames == 0:
            raise ManifestError(f"tracklet {t.tracklet_id!r} has no frames")
        frames = t.frames if embedder is None else np.asarray(embedder.embed(t.frames))
        reps.append(_exact_mean(frames))
    dims = {r.shape[0] for r in reps}
    if len(dims) != 1:
        raise ManifestError(f"mixed embedding dims in manifest: {sorted(dims)}")
    X = np.vstack(reps)
    if not np.isfinite(X).all():
        raise ManifestError("non-finite tracklet representation")
    if normalize:
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        X = np.where(norms > 0.0, X / np.where(norms == 0.0, 1.0, norms), X)
    return tuple(t.tracklet_id for t in order), X


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one triplet-loss fine-tuning run.

    margin is either the string "soft" (softplus formulation, the default)
    or a non-negative float used as a hard hinge margin.  The learning rate
    decays exponentially: step t uses learning_rate * lr_decay**t.
    """

    iterations: int = 25_000
    batch_p: int = 8
    batch_k: int = 4
    margin: float | str = "soft"
    learning_rate: float = 0.05
    lr_decay: float = 0.9999
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch_p < 2 or self.batch_k < 2:
            raise ValueError("batch_p and batch_k must both be >= 2")
        if isinstance(self.margin, str):
            if self.margin != "soft":
                raise ValueError(f"margin must be 'soft' or a non-negative float, got {self.margin!r}")
        elif not (float(self.margin) >= 0.0):
            raise ValueError("hard margin must be >= 0")
        if not (self.learning_rate > 0.0):
            raise ValueError("learning_rate must be positive")
        if not (0.0 < self.lr_decay <= 1.0):
            raise ValueError("lr_decay must be in (0, 1]")


# Iteration budget used when training on a labeled source domain, which is
# typically run once and can afford a longer schedule than adaptation rounds.
SOURCE_ITERATIONS = 50_000


@dataclass(frozen=True)
class AdaptConfig:
    """Knobs for clustering and the adaptation loop.

    K: reciprocal-rank threshold; an edge survives if its rank weight <= K.
    T: cardinality threshold; a component becomes a cluster if size > T.
    k1: out-degree of the rank graph (defaults to K when omitted).
    I: number of cluster/fine-tune rounds.
    cluster_cap: soft upper bound on the expected number of distinct people;
        adaptation stops early when a round yields more clusters than this.
    connectivity: "weak" (default) or "strong" component semantics.
    normalize: L2-normalize tracklet representations before indexing.
    """

    K: int = 2
    T: int = 2
    k1: int | None = None
    I: int = 2
    cluster_cap: int = 850
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    connectivity: str = "weak"
    normalize: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be a positive integer")
        if self.T < 1:
            raise ValueError("T must be a positive integer")
        if self.I < 0:
            raise ValueError("I must be >= 0")
        if self.cluster_cap < 1:
            raise ValueError("cluster_cap must be positive")
        if self.connectivity not in ("weak", "strong"):
            raise ValueError(f"connectivity must be 'weak' or 'strong', got {self.connectivity!r}")
        if self.k1 is None:
            object.__setattr__(self, "k1", self.K)
        elif self.k1 < 1:
            raise ValueError("k1 must be a positive integer")
        if self.k1 < self.K:
            warnings.warn(
                f"k1={self.k1} is smaller than K={self.K}; rank weights above k1 "
                "can never be generated, so K is effectively capped at k1",
                stacklevel=2,
            )


def default_kt(n_cameras: int) -> tuple[int, int]:
    """Default (K, T) for a manifest with the given camera count.

    Two-camera domains use (1, 1); anything wider uses (2, 2).
    """
    if n_cameras < 2:
        raise ValueError("need at least two cameras")
    return (1, 1) if n_cameras == 2 else (2, 2)
