"""Retrieval metrics (CMC, mAP) and cluster quality reporting.

Ranking follows the standard single-shot protocol: every query ranks the
rest of the manifest by distance, with same-camera same-identity entries
removed from its gallery.  Cluster quality uses a four-way taxonomy:

  GC     one identity, appearing in no other cluster ("golden")
  MC     two or more identities, none shared with another cluster
  DC     one identity that also appears in at least one other cluster
  MC+DC  two or more identities, at least one shared
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError, ManifestError
from .graph import ClusterSet
from .model import DomainManifest, manifest_embeddings

GC = "GC"
MC = "MC"
DC = "DC"
MC_DC = "MC+DC"


@dataclass(frozen=True, eq=False)
class QueryRanking:
    query_id: str
    gallery_ids: tuple[str, ...]
    distances: np.ndarray
    relevant: np.ndarray  # boolean mask aligned with gallery_ids


@dataclass(frozen=True, eq=False)
class RankingResult:
    queries: tuple[QueryRanking, ...]

    def __len__(self):
        return len(self.queries)


def build_ranking(
    m: DomainManifest,
    embedder=None,
    queries=None,
    normalize: bool = False,
) -> RankingResult:
    """Rank the manifest for each query tracklet.

    Every tracklet must carry an identity label.  For each query the gallery
    is every other tracklet except same-camera entries of the same identity;
    it is sorted by ascending true Euclidean distance with ties broken by
    ascending tracklet_id.  queries defaults to all tracklet ids.
    """
    for t in m.tracklets:
        if t.identity is None:
            raise EvaluationError(f"tracklet {t.tracklet_id!r} is unlabeled")
    ids, X = manifest_embeddings(m, embedder=embedder, normalize=normalize)
    pos = {tid: i for i, tid in enumerate(ids)}
    cams = [m.by_id[tid].camera_id for tid in ids]
    idents = [m.by_id[tid].identity for tid in ids]

    if queries is None:
        query_ids = list(ids)
    else:
        query_ids = list(queries)
        for q in query_ids:
            if q not in pos:
                raise KeyError(f"unknown query tracklet id {q!r}")

    out = []
    for q in query_ids:
        qi = pos[q]
        keep = [
            j
            for j in range(len(ids))
            if j != qi and not (cams[j] == cams[qi] and idents[j] == idents[qi])
        ]
        keep = np.array(keep, dtype=int)
        diff = X[keep] - X[qi]
        d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        order = keep[np.argsort(d, kind="stable")]  # keep ascends in id: ties -> id order
        dist_sorted = np.sqrt(np.einsum("ij,ij->i", X[order] - X[qi], X[order] - X[qi]))
        dist_sorted.setflags(write=False)
        rel = np.array([idents[j] == idents[qi] for j in order], dtype=bool)
        rel.setflags(write=False)
        out.append(
            QueryRanking(
                query_id=q,
                gallery_ids=tuple(ids[j] for j in order),
                distances=dist_sorted,
                relevant=rel,
            )
        )
    return RankingResult(queries=tuple(out))


def _first_hits(r: RankingResult) -> np.ndarray:
    firsts = np.empty(len(r.queries), dtype=np.int64)
    for i, q in enumerate(r.queries):
        hits = np.flatnonzero(q.relevant)
        if hits.size == 0:
            raise EvaluationError(f"query {q.query_id!r} has no relevant gallery items")
        firsts[i] = hits[0] + 1  # 1-based rank
    return firsts


def cmc(r: RankingResult, ranks=(1, 5, 10, 20)) -> np.ndarray:
    """Cumulative match characteristic at the given ranks.

    cmc[k] is the fraction of queries whose first relevant gallery item
    appears at rank <= k.  Depends only on result order, so any strictly
    monotone rescaling of the distances leaves it unchanged.
    """
    ranks = list(ranks)
    if not ranks or any(k < 1 for k in ranks):
        raise ValueError("ranks must be positive integers")
    if not r.queries:
        raise EvaluationError("ranking holds no queries")
    firsts = _first_hits(r)
    return np.array([float((firsts <= k).mean()) for k in ranks])


def average_precision(q: QueryRanking) -> float:
    """AP for one query: mean of precision-at-hit over its relevant items."""
    hits = np.flatnonzero(q.relevant)
    if hits.size == 0:
        raise EvaluationError(f"query {q.query_id!r} has no relevant gallery items")
    positions = hits + 1
    precisions = np.arange(1, hits.size + 1, dtype=np.float64) / positions
    return float(precisions.mean())


def mean_average_precision(r: RankingResult) -> float:
    if not r.queries:
        raise EvaluationError("ranking holds no queries")
    return float(np.mean([average_precision(q) for q in r.queries]))


@dataclass(frozen=True)
class ClusterQuality:
    """Per-cluster taxonomy labels, their counts, and mean purity."""

    labels: dict[int, str]
    counts: dict[str, int]
    purity: float


def _cluster_identities(clusters: ClusterSet, truth: DomainManifest) -> dict[int, list[str]]:
    idents: dict[int, list[str]] = {}
    for c in clusters.clusters:
        members = sorted(c.members)
        row = []
        for tid in members:
            t = truth.by_id.get(tid)
            if t is None:
                raise EvaluationError(f"clustered tracklet {tid!r} not present in truth manifest")
            if t.identity is None:
                raise EvaluationError(f"clustered tracklet {tid!r} has no ground-truth identity")
            row.append(t.identity)
        idents[c.cluster_id] = row
    return idents


def _majority_identity(identities: list[str]) -> str:
    # Ties go to the smallest identity string so the choice is deterministic.
    counts = Counter(identities)
    return min(counts, key=lambda ident: (-counts[ident], ident))


def classify_clusters(clusters: ClusterSet, truth: DomainManifest) -> ClusterQuality:
    """Label every cluster GC / MC / DC / MC+DC against ground truth.

    Purity is the mean over clusters of the majority-identity fraction.
    """
    if not clusters.clusters:
        raise EvaluationError("no clusters to classify")
    idents = _cluster_identities(clusters, truth)

    appearing: dict[str, set[int]] = {}
    for cid, row in idents.items():
        for ident in set(row):
            appearing.setdefault(ident, set()).add(cid)

    labels: dict[int, str] = {}
    purities = []
    for cid, row in sorted(idents.items()):
        uniq = set(row)
        shared = any(len(appearing[ident]) > 1 for ident in uniq)
        if len(uniq) == 1:
            labels[cid] = DC if shared else GC
        else:
            labels[cid] = MC_DC if shared else MC
        majority = _majority_identity(row)
        purities.append(row.count(majority) / len(row))

    counts = {GC: 0, MC: 0, DC: 0, MC_DC: 0}
    for lab in labels.values():
        counts[lab] += 1
    return ClusterQuality(labels=labels, counts=counts, purity=float(np.mean(purities)))


def inter_intra_distances(
    clusters: ClusterSet,
    truth: DomainManifest,
    embedder=None,
    method: str = "centroid",
) -> tuple[list[float], list[float]]:
    """Distances between all cluster pairs, split by majority identity.

    A pair is *intra* when both clusters have the same majority identity
    (the same person split across clusters) and *inter* otherwise.  method
    "centroid" measures between cluster centroids; "min-pairwise" takes the
    minimum distance over member tracklet representations.

    Returns (intra, inter) lists, ordered by ascending cluster id pairs.
    """
    if method not in ("centroid", "min-pairwise"):
        raise ValueError(f"method must be 'centroid' or 'min-pairwise', got {method!r}")
    if len(clusters.clusters) < 2:
        raise EvaluationError("need at least two clusters to compare distances")
    idents = _cluster_identities(clusters, truth)

    try:
        ids, X = manifest_embeddings(truth, embedder=embedder)
    except ManifestError as exc:
        raise EvaluationError(str(exc)) from exc
    pos = {tid: i for i, tid in enumerate(ids)}

    ordered = sorted(clusters.clusters, key=lambda c: c.cluster_id)
    member_rows = [np.array([pos[tid] for tid in sorted(c.members)]) for c in ordered]
    centroids = np.vstack([X[rows].mean(axis=0) for rows in member_rows])
    majorities = [_majority_identity(idents[c.cluster_id]) for c in ordered]

    intra: list[float] = []
    inter: list[float] = []
    for i in range(len(ordered)):
        for j in range(i + 1, len(ordered)):
            if method == "centroid":
                d = float(np.linalg.norm(centroids[i] - centroids[j]))
            else:
                A = X[member_rows[i]]
                B = X[member_rows[j]]
                diff = A[:, None, :] - B[None, :, :]
                d = float(np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)).min())
            (intra if majorities[i] == majorities[j] else inter).append(d)
    return intra, inter
