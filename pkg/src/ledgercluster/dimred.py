"""Latent-space dimensionality reduction: PCA, a simplified UMAP, identity.

The UMAP here follows the published algorithm's core (fuzzy k-NN graph with
per-point bandwidth calibration, fuzzy union, negative-sampling layout) at
desk scale: dense neighbour search, random initialization, fixed negative
sample count. Exact parity with the reference implementation is a non-goal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit

from .errors import ShapeMismatch, TooFewPoints

_SMOOTH_TOL = 1e-5
_GRAD_CLIP = 4.0


@dataclass
class Projection:
    kind: str  # "PCA" | "UMAP" | "NONE"
    out_dim: int
    # PCA state
    mean: np.ndarray | None = None
    components: np.ndarray | None = None  # (d, out_dim), orthonormal columns
    explained_variance: np.ndarray | None = None
    # UMAP state
    train_points: np.ndarray | None = None
    train_embedding: np.ndarray | None = None
    n_neighbors: int = 15

    def transform(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        if self.kind == "NONE":
            return points
        if self.kind == "PCA":
            return pca_transform(self, points)
        return _umap_transform(self, points)


def identity(points: np.ndarray) -> np.ndarray:
    return points


def identity_projection(dim: int) -> Projection:
    return Projection(kind="NONE", out_dim=dim)


# --- PCA -----------------------------------------------------------------------

def pca_fit(points: np.ndarray, out_dim: int) -> Projection:
    """Mean-centred SVD projection onto the top ``out_dim`` directions."""
    points = np.asarray(points, dtype=np.float64)
    n, d = points.shape
    if n < 2:
        raise TooFewPoints("PCA needs at least 2 points")
    if out_dim > min(n, d):
        raise ValueError("out_dim exceeds min(N, d)")
    mean = points.mean(axis=0)
    centred = points - mean
    _, s, vt = np.linalg.svd(centred, full_matrices=False)
    components = vt[:out_dim].T  # (d, out_dim)
    variances = (s[:out_dim] ** 2) / n
    return Projection(
        kind="PCA",
        out_dim=out_dim,
        mean=mean,
        components=components,
        explained_variance=variances,
    )


def pca_transform(proj: Projection, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if proj.components is None or proj.mean is None:
        raise ValueError("projection is not fitted")
    if points.shape[1] != proj.mean.shape[0]:
        raise ShapeMismatch(f"expected dimension {proj.mean.shape[0]}")
    return (points - proj.mean) @ proj.components


def pca_inverse(proj: Projection, reduced: np.ndarray) -> np.ndarray:
    return reduced @ proj.components.T + proj.mean


# --- UMAP ------------------------------------------------------------------------

def smooth_knn_sigma(distances: np.ndarray, target: float, n_iter: int = 64
                     ) -> tuple[float, float]:
    """Bisect the bandwidth so the fuzzy neighbourhood cardinality hits ``target``.

    ``distances`` is one point's sorted neighbour distances (self excluded).
    Returns (sigma, rho) with rho the nearest-neighbour distance.
    """
    rho = float(distances[0])
    lo, hi, mid = 0.0, np.inf, 1.0
    for _ in range(n_iter):
        psum = float(np.sum(np.exp(-np.maximum(distances - rho, 0.0) / mid)))
        if abs(psum - target) < _SMOOTH_TOL:
            break
        if psum > target:
            hi = mid
            mid = (lo + hi) / 2.0
        else:
            lo = mid
            mid = mid * 2.0 if hi == np.inf else (lo + hi) / 2.0
    return mid, rho


def fit_ab_params(min_dist: float, spread: float = 1.0) -> tuple[float, float]:
    """Least-squares fit of the embedding kernel 1/(1 + a d^(2b)) to the
    offset exponential defined by ``min_dist``."""

    def curve(x, a, b):
        return 1.0 / (1.0 + a * x ** (2 * b))

    xv = np.linspace(0, spread * 3, 300)
    yv = np.where(xv < min_dist, 1.0, np.exp(-(xv - min_dist) / spread))
    params, _ = curve_fit(curve, xv, yv)
    return float(params[0]), float(params[1])


def _knn(points: np.ndarray, n_neighbors: int) -> tuple[np.ndarray, np.ndarray]:
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    np.fill_diagonal(dist, np.inf)
    idx = np.argsort(dist, axis=1, kind="stable")[:, :n_neighbors]
    return idx, np.take_along_axis(dist, idx, axis=1)


def fuzzy_membership_matrix(points: np.ndarray, n_neighbors: int) -> np.ndarray:
    """Symmetrized fuzzy k-NN membership strengths as a dense (N, N) matrix."""
    n = points.shape[0]
    idx, dists = _knn(points, n_neighbors)
    target = float(np.log2(n_neighbors))
    w = np.zeros((n, n))
    for i in range(n):
        sigma, rho = smooth_knn_sigma(dists[i], target)
        w[i, idx[i]] = np.exp(-np.maximum(dists[i] - rho, 0.0) / sigma)
    return w + w.T - w * w.T


def umap_fit(points: np.ndarray, out_dim: int = 2, n_neighbors: int = 15,
             min_dist: float = 0.1, epochs: int = 200, seed: int = 0) -> Projection:
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n <= n_neighbors:
        raise TooFewPoints(f"need more than n_neighbors={n_neighbors} points, got {n}")
    graph = fuzzy_membership_matrix(points, n_neighbors)
    a, b = fit_ab_params(min_dist)
    rng = np.random.default_rng(seed)
    embedding = rng.uniform(-10.0, 10.0, size=(n, out_dim))

    heads, tails = np.nonzero(np.triu(graph, k=1))
    weights = graph[heads, tails]
    # Edge scheduling: stronger memberships are sampled every epoch, weaker
    # ones proportionally less often.
    epochs_per_sample = np.where(weights > 0, weights.max() / weights, np.inf)
    next_due = epochs_per_sample.copy()

    n_negatives = 5
    for epoch in range(epochs):
        alpha = 1.0 - epoch / epochs
        for e in range(len(heads)):
            if next_due[e] > epoch + 1:
                continue
            next_due[e] += epochs_per_sample[e]
            i, j = heads[e], tails[e]
            delta = embedding[i] - embedding[j]
            d2 = float(delta @ delta)
            if d2 > 0:
                coeff = (-2.0 * a * b * d2 ** (b - 1.0)) / (1.0 + a * d2 ** b)
                grad = np.clip(coeff * delta, -_GRAD_CLIP, _GRAD_CLIP)
            else:
                grad = np.zeros(out_dim)
            embedding[i] += alpha * grad
            embedding[j] -= alpha * grad
            for _ in range(n_negatives):
                m = int(rng.integers(n))
                if m == i:
                    continue
                delta = embedding[i] - embedding[m]
                d2 = float(delta @ delta)
                coeff = (2.0 * b) / ((0.001 + d2) * (1.0 + a * d2 ** b))
                grad = np.clip(coeff * delta, -_GRAD_CLIP, _GRAD_CLIP)
                embedding[i] += alpha * grad
    return Projection(
        kind="UMAP",
        out_dim=out_dim,
        train_points=points.copy(),
        train_embedding=embedding,
        n_neighbors=n_neighbors,
    )


def umap_fit_transform(points: np.ndarray, out_dim: int = 2, n_neighbors: int = 15,
                       min_dist: float = 0.1, epochs: int = 200, seed: int = 0
                       ) -> np.ndarray:
    return umap_fit(points, out_dim, n_neighbors, min_dist, epochs, seed).train_embedding


def _umap_transform(proj: Projection, points: np.ndarray) -> np.ndarray:
    """Out-of-sample extension: membership-weighted average of the nearest
    training points' embeddings."""
    if proj.train_points is None or proj.train_embedding is None:
        raise ValueError("projection is not fitted")
    train = proj.train_points
    k = min(proj.n_neighbors, train.shape[0])
    target = float(np.log2(k)) if k > 1 else 1.0
    out = np.empty((points.shape[0], proj.out_dim))
    for r, x in enumerate(points):
        dist = np.linalg.norm(train - x, axis=1)
        idx = np.argsort(dist, kind="stable")[:k]
        d = dist[idx]
        sigma, rho = smooth_knn_sigma(np.maximum(d, 0.0), target)
        w = np.exp(-np.maximum(d - rho, 0.0) / sigma)
        w = w / w.sum()
        out[r] = w @ proj.train_embedding[idx]
    return out
