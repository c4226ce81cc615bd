"""Flat clustering, centroid initialisation, internal metrics and validity checks."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    CoincidentCentroids,
    SingleCluster,
    TooFewPoints,
)
from .losses import cid as cid_metric


class Validity(Enum):
    VALID = "Valid"
    DEGENERATE = "DegenerateCluster"
    DIVERGED = "Diverged"


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    k: int
    source: str  # "kmeans" | "layer" | "hierarchical"

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1:
            raise ValueError("labels must be 1-D")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.k):
            raise ValueError("labels out of range")


class DivergenceSignal:
    """Marker passed to validate() when training could not produce assignments."""

    def __init__(self, detail: str = ""):
        self.detail = detail


def validate(outcome, n: int) -> Validity:
    """Map a training outcome to exactly one validity verdict."""
    if isinstance(outcome, (DivergenceSignal, Exception)):
        return Validity.DIVERGED
    assignment: ClusterAssignment = outcome
    counts = np.bincount(assignment.labels, minlength=assignment.k)
    if counts.max() == n:
        return Validity.DEGENERATE
    return Validity.VALID


def hard_assign(q) -> ClusterAssignment:
    """Row-wise argmax of soft assignments; ties go to the lowest cluster index."""
    qm = np.asarray(getattr(q, "q", q), dtype=np.float64)
    labels = qm.argmax(axis=1)
    return ClusterAssignment(labels=labels, k=qm.shape[1], source="layer")


# --- k-means ------------------------------------------------------------------

def _plus_plus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    first = rng.integers(n)
    centroids[0] = points[first]
    closest = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            r = rng.uniform(0, total)
            idx = int(np.searchsorted(np.cumsum(closest), r))
            idx = min(idx, n - 1)
        centroids[j] = points[idx]
        closest = np.minimum(closest, np.sum((points - centroids[j]) ** 2, axis=1))
    return centroids


def _lloyd(points: np.ndarray, k: int, rng: np.random.Generator,
           max_iter: int, tol: float) -> tuple[np.ndarray, np.ndarray, list[float]]:
    centroids = _plus_plus_init(points, k, rng)
    history: list[float] = []
    labels = np.zeros(points.shape[0], dtype=np.int64)
    for _ in range(max_iter):
        d2 = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        labels = d2.argmin(axis=1)
        # Re-seed empty clusters to the point farthest from its own centroid.
        for j in range(k):
            if not np.any(labels == j):
                worst = int(np.argmax(d2[np.arange(len(labels)), labels]))
                labels[worst] = j
                d2[worst, :] = np.inf
                d2[worst, j] = 0.0
        new_centroids = np.vstack([
            points[labels == j].mean(axis=0) if np.any(labels == j) else centroids[j]
            for j in range(k)
        ])
        wcss = float(np.sum((points - new_centroids[labels]) ** 2))
        history.append(wcss)
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        if shift < tol:
            break
    return labels, centroids, history


def kmeans(points: np.ndarray, k: int, seed: int, max_iter: int = 300,
           tol: float = 1e-4, restarts: int = 10) -> tuple[ClusterAssignment, np.ndarray]:
    """Best-of-restarts Lloyd's algorithm with k-means++ seeding."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if k < 1 or n < k:
        raise TooFewPoints(f"need at least k={k} points, got {n}")
    best: tuple[float, np.ndarray, np.ndarray] | None = None
    seeds = np.random.SeedSequence(seed).spawn(restarts)
    for ss in seeds:
        rng = np.random.default_rng(ss)
        labels, centroids, history = _lloyd(points, k, rng, max_iter, tol)
        wcss = history[-1]
        if best is None or wcss < best[0] - 1e-12:
            best = (wcss, labels, centroids)
    assert best is not None
    return ClusterAssignment(labels=best[1], k=k, source="kmeans"), best[2]


# --- agglomerative complete linkage ---------------------------------------------

def agglomerative_complete(points: np.ndarray, k: int) -> ClusterAssignment:
    """Greedy complete-linkage merging, cut at k clusters.

    Cluster distances are maintained with the Lance-Williams max update;
    ties break on the lowest (i, j) cluster-position pair.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if k < 1 or n < k:
        raise TooFewPoints(f"need at least k={k} points, got {n}")
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    members: list[list[int]] = [[i] for i in range(n)]
    active = list(range(n))
    while len(active) > k:
        best_pair: tuple[int, int] | None = None
        best_d = np.inf
        for a in range(len(active)):
            for b in range(a + 1, len(active)):
                d = dist[active[a], active[b]]
                if d < best_d - 1e-15:
                    best_d = d
                    best_pair = (a, b)
        assert best_pair is not None
        a, b = best_pair
        ia, ib = active[a], active[b]
        # Complete linkage: distance to the merged cluster is the max of the parts.
        for other in active:
            if other in (ia, ib):
                continue
            m = max(dist[ia, other], dist[ib, other])
            dist[ia, other] = m
            dist[other, ia] = m
        members[ia] = members[ia] + members[ib]
        active.pop(b)
    labels = np.empty(n, dtype=np.int64)
    for idx, ci in enumerate(active):
        labels[members[ci]] = idx
    return ClusterAssignment(labels=labels, k=k, source="hierarchical")


def init_centroids(z: np.ndarray, k: int) -> np.ndarray:
    """Complete-linkage clusters of the flattened latents, averaged per cluster."""
    z = np.asarray(z, dtype=np.float64)
    flat = z.reshape(z.shape[0], -1)
    assignment = agglomerative_complete(flat, k)
    centroids = np.vstack([flat[assignment.labels == j].mean(axis=0) for j in range(k)])
    return centroids.reshape((k,) + z.shape[1:])


# --- internal metrics ------------------------------------------------------------

def _pairwise(points: np.ndarray, metric) -> np.ndarray:
    if metric in ("euclid", None):
        flat = points.reshape(points.shape[0], -1)
        diff = flat[:, None, :] - flat[None, :, :]
        return np.sqrt(np.sum(diff * diff, axis=2))
    if metric == "cid":
        n = points.shape[0]
        out = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                out[i, j] = out[j, i] = cid_metric(points[i], points[j])
        return out
    raise ValueError(f"unknown metric {metric!r}")


def _nonempty_clusters(labels: np.ndarray, k: int) -> list[np.ndarray]:
    groups = [np.flatnonzero(labels == j) for j in range(k)]
    return [g for g in groups if g.size]


def silhouette(points: np.ndarray, assignment: ClusterAssignment,
               metric: str = "euclid") -> float:
    """Mean silhouette over all points; singletons and a=b=0 contribute 0."""
    points = np.asarray(points, dtype=np.float64)
    labels = assignment.labels
    groups = _nonempty_clusters(labels, assignment.k)
    if len(groups) < 2:
        raise SingleCluster("silhouette needs at least 2 nonempty clusters")
    dist = _pairwise(points, metric)
    scores = np.zeros(points.shape[0])
    for gi, g in enumerate(groups):
        for i in g:
            if g.size == 1:
                scores[i] = 0.0
                continue
            a = dist[i, g].sum() / (g.size - 1)
            b = min(dist[i, h].mean() for hj, h in enumerate(groups) if hj != gi)
            denom = max(a, b)
            scores[i] = 0.0 if denom <= 0 else (b - a) / denom
    return float(scores.mean())


def davies_bouldin(points: np.ndarray, assignment: ClusterAssignment) -> float:
    """Mean worst-case (S_i + S_j) / M_ij over clusters; lower is better."""
    points = np.asarray(points, dtype=np.float64).reshape(len(assignment.labels), -1)
    labels = assignment.labels
    groups = _nonempty_clusters(labels, assignment.k)
    if len(groups) < 2:
        raise SingleCluster("DBI needs at least 2 nonempty clusters")
    centroids = np.vstack([points[g].mean(axis=0) for g in groups])
    scatter = np.array([
        float(np.mean(np.linalg.norm(points[g] - centroids[gi], axis=1)))
        for gi, g in enumerate(groups)
    ])
    m = len(groups)
    worst = np.zeros(m)
    for i in range(m):
        ratios = []
        for j in range(m):
            if i == j:
                continue
            sep = float(np.linalg.norm(centroids[i] - centroids[j]))
            if sep < 1e-12:
                raise CoincidentCentroids(f"clusters {i} and {j}")
            ratios.append((scatter[i] + scatter[j]) / sep)
        worst[i] = max(ratios)
    return float(worst.mean())
