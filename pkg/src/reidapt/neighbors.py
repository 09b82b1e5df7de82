"""Exact cross-camera nearest-neighbor ranking.

For every tracklet s the index holds the complete list of tracklets from
*other* cameras, sorted by ascending Euclidean distance to s's representation
(ties broken by ascending tracklet_id).  Ranks are 1-based.  The rank-based
distance e(s, t) is the position of s inside t's list; it is deliberately
asymmetric: if t is s's 1-nearest neighbour while s is only t's 5-nearest
neighbour, then e(s, t) = 5.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ManifestError
from .model import DomainManifest, manifest_embeddings, validate_manifest

_BLOCK = 256


@dataclass(frozen=True, eq=False)
class NeighborIndex:
    """Frozen neighbor lists and rank lookups for one manifest."""

    ids: tuple[str, ...]
    cameras: tuple[str, ...]
    lists: tuple[np.ndarray, ...]
    ranks: np.ndarray  # ranks[i, j]: 1-based rank of j in i's list, 0 if undefined
    index_of: dict[str, int]

    def __len__(self):
        return len(self.ids)

    def __contains__(self, tracklet_id: str) -> bool:
        return tracklet_id in self.index_of

    def neighbor_ids(self, tracklet_id: str) -> tuple[str, ...]:
        """Full cross-camera list for one tracklet, best match first."""
        i = self._lookup(tracklet_id)
        return tuple(self.ids[j] for j in self.lists[i])

    def _lookup(self, tracklet_id: str) -> int:
        try:
            return self.index_of[tracklet_id]
        except KeyError:
            raise KeyError(f"unknown tracklet id {tracklet_id!r}") from None


def _pairwise_sq_dists(X: np.ndarray) -> np.ndarray:
    # Blocked difference-based computation: no large intermediate, and the
    # per-pair reduction order is fixed, so results do not depend on BLAS
    # threading.
    n = X.shape[0]
    d2 = np.empty((n, n), dtype=np.float64)
    for start in range(0, n, _BLOCK):
        stop = min(start + _BLOCK, n)
        diff = X[start:stop, None, :] - X[None, :, :]
        d2[start:stop] = np.einsum("ijk,ijk->ij", diff, diff)
    return d2


def build_neighbor_index(m: DomainManifest, embedder=None, normalize: bool = False) -> NeighborIndex:
    """Build the exact cross-camera neighbor index for a manifest.

    Tracklet representations are mean (optionally embedded) frame vectors;
    see manifest_embeddings.  Requires a valid manifest spanning at least
    two cameras.
    """
    report = validate_manifest(m)
    if not report.ok:
        first = report.violations[0]
        raise ManifestError(
            f"manifest {m.name!r} is invalid ({len(report.violations)} violations; "
            f"first: {first.kind}: {first.message})"
        )
    if len(m.cameras) < 2:
        raise DomainError(
            f"cross-camera neighbors undefined: manifest {m.name!r} has a single camera"
        )

    ids, X = manifest_embeddings(m, embedder=embedder, normalize=normalize)
    cams = np.array([m.by_id[tid].camera_id for tid in ids])
    n = len(ids)
    d2 = _pairwise_sq_dists(X)

    lists: list[np.ndarray] = []
    ranks = np.zeros((n, n), dtype=np.int32)
    for i in range(n):
        cand = np.flatnonzero(cams != cams[i])
        # cand is ascending in tracklet_id (ids are sorted), so a stable sort
        # on distance breaks ties by ascending id.
        order = cand[np.argsort(d2[i, cand], kind="stable")].astype(np.int32)
        order.setflags(write=False)
        lists.append(order)
        ranks[i, order] = np.arange(1, len(order) + 1, dtype=np.int32)
    ranks.setflags(write=False)

    return NeighborIndex(
        ids=tuple(ids),
        cameras=tuple(cams.tolist()),
        lists=tuple(lists),
        ranks=ranks,
        index_of={tid: i for i, tid in enumerate(ids)},
    )


def top_k(idx: NeighborIndex, k: int, tracklet_id: str) -> tuple[str, ...]:
    """First min(k, L) entries of the tracklet's cross-camera list."""
    if k < 1:
        raise ValueError("k must be a positive integer")
    i = idx._lookup(tracklet_id)
    head = idx.lists[i][:k]
    return tuple(idx.ids[j] for j in head)


def k_reciprocal_distance(idx: NeighborIndex, s: str, t: str) -> int:
    """Rank of s inside t's cross-camera neighbor list (1-based, asymmetric)."""
    si = idx._lookup(s)
    ti = idx._lookup(t)
    if idx.cameras[si] == idx.cameras[ti]:
        raise DomainError(
            f"rank distance undefined for same-camera pair ({s!r}, {t!r}) "
            f"on camera {idx.cameras[si]!r}"
        )
    return int(idx.ranks[ti, si])
