"""Size-constrained recursive 2-means clustering.

Clusters are built by repeated bisection: a node with at least ``2 n0``
points is split by Lloyd's 2-means; when either side falls below ``n0``
the node is instead split evenly at random.  Every leaf therefore holds
between ``n0`` and ``2 n0 - 1`` points (when the input holds at least
``n0``).

Distances are taken in the length-scale rescaled space ``x_j / l_j``,
where the kernel-distance objective ``sum |1 - exp(-A/2)|`` and the
linear k-means objective ``sum A`` share nearest-centroid assignments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gp import RbfHyperparams

LLOYD_MAX_ITER = 100


@dataclass(frozen=True)
class ClusterMetric:
    """Rescaled-RBF (``length_scales`` given) or raw Euclidean baseline (``None``)."""

    length_scales: np.ndarray | None = None

    def __post_init__(self):
        if self.length_scales is not None:
            ls = np.asarray(self.length_scales, dtype=float).ravel()
            if ls.size == 0 or not np.all(ls > 0):
                raise ValueError("length scales must be positive")
            object.__setattr__(self, "length_scales", ls)

    @classmethod
    def rescaled(cls, length_scales) -> "ClusterMetric":
        return cls(np.asarray(length_scales, dtype=float))

    @classmethod
    def euclidean(cls) -> "ClusterMetric":
        return cls(None)

    @property
    def is_euclidean(self) -> bool:
        return self.length_scales is None

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return X if self.length_scales is None else X / self.length_scales


@dataclass(frozen=True)
class Clustering:
    """Assignments (0-based ids), centroids in feature units, and cluster sizes."""

    assignments: np.ndarray
    centroids: np.ndarray
    sizes: np.ndarray

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]


def lloyd_two_means(Xs: np.ndarray, max_iter: int = LLOYD_MAX_ITER):
    """Lloyd's iteration with k = 2 on already-transformed points.

    Initial centres are the two members at the extremes of the top
    principal direction.  Returns ``(labels, centres, objective_trace)``
    where the trace holds the within-cluster sum of squares after each
    assignment step.  An empty side is refilled with the point farthest
    from the surviving centre.
    """
    n = Xs.shape[0]
    centered = Xs - Xs.mean(axis=0)
    cov = centered.T @ centered
    _, vecs = np.linalg.eigh(cov)
    proj = centered @ vecs[:, -1]
    centres = Xs[[int(np.argmin(proj)), int(np.argmax(proj))]].copy()

    labels = None
    trace = []
    for _ in range(max_iter):
        d0 = np.sum((Xs - centres[0]) ** 2, axis=1)
        d1 = np.sum((Xs - centres[1]) ** 2, axis=1)
        new_labels = (d1 < d0).astype(np.int8)
        trace.append(float(np.sum(np.where(new_labels == 1, d1, d0))))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        n1 = int(labels.sum())
        if n1 == 0 or n1 == n:
            break
        centres[0] = Xs[labels == 0].mean(axis=0)
        centres[1] = Xs[labels == 1].mean(axis=0)

    n1 = int(labels.sum())
    if n1 == 0 or n1 == n:
        full = 1 if n1 == n else 0
        dist = np.sum((Xs - Xs.mean(axis=0)) ** 2, axis=1)
        labels = labels.copy()
        labels[int(np.argmax(dist))] = 1 - full
    centres[0] = Xs[labels == 0].mean(axis=0)
    centres[1] = Xs[labels == 1].mean(axis=0)
    return labels, centres, trace


def two_means_split(X: np.ndarray, metric: ClusterMetric, seed: int | None = None):
    """Split ``X`` into two non-empty groups with 2-means in the metric's space.

    Returns ``(left_indices, right_indices, centroids)`` with centroids in
    feature units.  The split is deterministic; ``seed`` is accepted for
    interface symmetry with :func:`even_random_split`.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] < 2:
        raise ValueError("need at least two points to split")
    labels, _, _ = lloyd_two_means(metric.transform(X))
    left = np.flatnonzero(labels == 0)
    right = np.flatnonzero(labels == 1)
    centroids = np.vstack([X[left].mean(axis=0), X[right].mean(axis=0)])
    return left, right, centroids


def even_random_split(n_points: int, rng: np.random.Generator | int):
    """Random halves of ``range(n_points)`` whose sizes differ by at most one."""
    if n_points < 2:
        raise ValueError("need at least two points to split")
    rng = np.random.default_rng(rng)
    perm = rng.permutation(n_points)
    half = n_points // 2
    return np.sort(perm[:half]), np.sort(perm[half:])


def recursive_cluster(X: np.ndarray, n0: int, metric: ClusterMetric, seed: int = 0) -> Clustering:
    """Recursive bisection under the minimum cluster size ``n0``.

    Leaves are numbered in depth-first, left-before-right order.  A root
    set with fewer than ``2 n0`` points comes back as a single cluster,
    even when it holds fewer than ``n0``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if n < 1:
        raise ValueError("cannot cluster an empty set")
    if n0 < 2:
        raise ValueError("n0 must be at least 2")
    Xs = metric.transform(X)
    rng = np.random.default_rng(seed)

    leaves = []
    stack = [np.arange(n)]
    while stack:
        idx = stack.pop()
        if 2 * n0 > idx.size:
            leaves.append(idx)
            continue
        labels, _, _ = lloyd_two_means(Xs[idx])
        left = idx[labels == 0]
        right = idx[labels == 1]
        if min(left.size, right.size) < n0:
            a, b = even_random_split(idx.size, rng)
            left, right = idx[a], idx[b]
        # right pushed first so the left branch is explored first
        stack.append(right)
        stack.append(left)

    assignments = np.empty(n, dtype=np.intp)
    centroids = np.empty((len(leaves), X.shape[1]))
    sizes = np.empty(len(leaves), dtype=np.intp)
    for h, idx in enumerate(leaves):
        assignments[idx] = h
        centroids[h] = X[idx].mean(axis=0)
        sizes[h] = idx.size
    return Clustering(assignments, centroids, sizes)


def _check_shapes(clustering: Clustering, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] != clustering.assignments.size or X.shape[1] != clustering.centroids.shape[1]:
        raise ValueError("clustering does not match the data shape")
    return X


def clustering_objective(clustering: Clustering, X: np.ndarray, params: RbfHyperparams) -> float:
    """Kernel-distance compactness ``sum_i |1 - k(x_i, z)/k(z, z)|``."""
    X = _check_shapes(clustering, X)
    diff = (X - clustering.centroids[clustering.assignments]) / params.length_scales
    a = np.sum(diff**2, axis=1)
    return float(np.sum(np.abs(1.0 - np.exp(-0.5 * a))))


def kmeans_objective(clustering: Clustering, X: np.ndarray, metric: ClusterMetric) -> float:
    """Within-cluster sum of squared distances in the metric's space."""
    X = _check_shapes(clustering, X)
    diff = metric.transform(X) - metric.transform(clustering.centroids)[clustering.assignments]
    return float(np.sum(diff**2))
