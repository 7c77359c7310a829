"""Transductive manifold embeddings (LLE and Isomap) over a k-NN graph.

Training and query points are embedded together; there is no
out-of-sample map, so a model fitted on an embedding can only predict at
points that were present when the embedding was computed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh
from scipy.spatial import cKDTree

from .errors import EmbeddingError, GraphConnectivityError

logger = logging.getLogger(__name__)

METHODS = ("none", "lle", "isomap")
LLE_REG = 1e-3

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None


@dataclass(frozen=True)
class EmbeddingConfig:
    method: str = "none"
    k_neighbors: int = 50
    target_dim: int = 2

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown embedding method {self.method!r}; expected one of {METHODS}")
        if self.k_neighbors < 1 or self.target_dim < 1:
            raise ValueError("k_neighbors and target_dim must be positive")
        if self.method == "lle" and self.k_neighbors < self.target_dim + 1:
            raise ValueError("LLE needs k_neighbors >= target_dim + 1")

    @property
    def active(self) -> bool:
        return self.method != "none"


@dataclass(frozen=True)
class EmbeddedSpace:
    points: np.ndarray
    source_count: int


def _validate(X: np.ndarray, config: EmbeddingConfig) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    if config.target_dim > d:
        raise ValueError(f"target_dim {config.target_dim} exceeds feature dimension {d}")
    if config.k_neighbors >= n:
        raise ValueError(f"k_neighbors {config.k_neighbors} must be below the point count {n}")
    return X


def knn_graph(X: np.ndarray, k: int):
    """Neighbour indices/distances (self excluded) and the symmetrized sparse graph."""
    dist, idx = cKDTree(X).query(X, k=k + 1)
    dist, idx = dist[:, 1:], idx[:, 1:]
    n = X.shape[0]
    rows = np.repeat(np.arange(n), k)
    G = sparse.csr_matrix((dist.ravel(), (rows, idx.ravel())), shape=(n, n))
    G = G.maximum(G.T).tocsr()
    return idx, dist, G


def _require_connected(G, k: int) -> None:
    n_comp, _ = connected_components(G, directed=False)
    if n_comp > 1:
        raise GraphConnectivityError(n_comp, k)


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _finish(points: np.ndarray, n: int) -> EmbeddedSpace:
    if not np.all(np.isfinite(points)):
        raise EmbeddingError("embedding produced non-finite coordinates")
    return EmbeddedSpace(np.ascontiguousarray(points), n)


# --- Isomap -----------------------------------------------------------------

if numba is not None:

    @numba.njit(cache=True)
    def _dijkstra_row(indptr, indices, data, src, out, done, heap_key, heap_val):
        n = indptr.size - 1
        for i in range(n):
            out[i] = np.inf
            done[i] = False
        out[src] = 0.0
        heap_key[0] = 0.0
        heap_val[0] = src
        size = 1
        while size > 0:
            du = heap_key[0]
            u = heap_val[0]
            size -= 1
            last_k = heap_key[size]
            last_v = heap_val[size]
            i = 0
            while True:
                c = 2 * i + 1
                if c >= size:
                    break
                if c + 1 < size and heap_key[c + 1] < heap_key[c]:
                    c += 1
                if heap_key[c] < last_k:
                    heap_key[i] = heap_key[c]
                    heap_val[i] = heap_val[c]
                    i = c
                else:
                    break
            if size > 0:
                heap_key[i] = last_k
                heap_val[i] = last_v
            if done[u]:
                continue
            done[u] = True
            for p in range(indptr[u], indptr[u + 1]):
                v = indices[p]
                nd = du + data[p]
                if nd < out[v]:
                    out[v] = nd
                    j = size
                    size += 1
                    while j > 0:
                        parent = (j - 1) // 2
                        if heap_key[parent] > nd:
                            heap_key[j] = heap_key[parent]
                            heap_val[j] = heap_val[parent]
                            j = parent
                        else:
                            break
                    heap_key[j] = nd
                    heap_val[j] = v

    @numba.njit(cache=True)
    def _all_pairs(indptr, indices, data, D):
        n = D.shape[0]
        done = np.zeros(n, np.bool_)
        cap = indices.size + n
        heap_key = np.empty(cap)
        heap_val = np.empty(cap, np.int64)
        for s in range(n):
            _dijkstra_row(indptr, indices, data, s, D[s], done, heap_key, heap_val)


def geodesic_distances(G) -> np.ndarray:
    """All-pairs shortest-path lengths over a symmetric sparse graph."""
    n = G.shape[0]
    if numba is None:
        from scipy.sparse.csgraph import shortest_path

        return shortest_path(G, method="D", directed=False)
    D = np.empty((n, n))
    _all_pairs(G.indptr.astype(np.int64), G.indices.astype(np.int64), G.data.astype(float), D)
    return D


def _start_vector(n: int) -> np.ndarray:
    return np.random.default_rng(0).uniform(-1.0, 1.0, n)


def isomap_embed(X_all: np.ndarray, config: EmbeddingConfig) -> EmbeddedSpace:
    """Classical MDS on geodesic distances of the symmetrized k-NN graph."""
    X = _validate(X_all, config)
    n = X.shape[0]
    _, _, G = knn_graph(X, config.k_neighbors)
    _require_connected(G, config.k_neighbors)

    B = geodesic_distances(G)
    # in place: B <- -1/2 J D^2 J
    np.square(B, out=B)
    row_mean = B.mean(axis=1)
    total_mean = row_mean.mean()
    B -= row_mean[:, None]
    B -= row_mean[None, :]
    B += total_mean
    B *= -0.5
    try:
        vals, vecs = eigsh(B, k=config.target_dim, which="LA", v0=_start_vector(n))
    except (ArpackError, ArpackNoConvergence) as exc:
        raise EmbeddingError(f"MDS eigen-solver failed: {exc}") from exc
    del B
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], _fix_signs(vecs[:, order])
    return _finish(vecs * np.sqrt(np.maximum(vals, 0.0)), n)


# --- LLE --------------------------------------------------------------------


def lle_weights(X: np.ndarray, k: int, reg: float = LLE_REG):
    """Barycentric reconstruction weights; every row sums to one.

    Each local Gram matrix gets a ridge of ``reg * trace(G) / k``.
    Returns ``(neighbour_indices, weights)``, both ``n x k``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    idx, _, _ = knn_graph(X, k)
    Zloc = X[idx] - X[:, None, :]
    gram = np.einsum("nkd,njd->nkj", Zloc, Zloc)
    trace = np.trace(gram, axis1=1, axis2=2)
    ridge = np.where(trace > 0, reg * trace / k, reg)
    gram[:, np.arange(k), np.arange(k)] += ridge[:, None]
    w = np.linalg.solve(gram, np.ones((X.shape[0], k, 1)))[..., 0]
    w /= w.sum(axis=1, keepdims=True)
    return idx, w


def lle_embed(X_all: np.ndarray, config: EmbeddingConfig) -> EmbeddedSpace:
    """Bottom non-constant eigenvectors of ``(I - W)^T (I - W)``, scaled to unit covariance."""
    X = _validate(X_all, config)
    n = X.shape[0]
    k = config.k_neighbors
    idx, w = lle_weights(X, k)
    _, _, G = knn_graph(X, k)
    _require_connected(G, k)

    W = sparse.csr_matrix((w.ravel(), (np.repeat(np.arange(n), k), idx.ravel())), shape=(n, n))
    IW = sparse.identity(n, format="csr") - W
    M = (IW.T @ IW).tocsc()
    try:
        # small negative shift keeps M - sigma I non-singular
        vals, vecs = eigsh(M, k=config.target_dim + 1, sigma=-1e-8, which="LM", v0=_start_vector(n))
    except (ArpackError, ArpackNoConvergence, RuntimeError) as exc:
        raise EmbeddingError(f"LLE eigen-solver failed: {exc}") from exc
    order = np.argsort(vals)
    vecs = vecs[:, order[1:]]
    vecs = vecs - vecs.mean(axis=0)
    vecs = _fix_signs(vecs)
    return _finish(vecs * np.sqrt(n) / np.linalg.norm(vecs, axis=0), n)


def embed(X_all: np.ndarray, config: EmbeddingConfig) -> EmbeddedSpace:
    if config.method == "lle":
        return lle_embed(X_all, config)
    if config.method == "isomap":
        return isomap_embed(X_all, config)
    X = np.atleast_2d(np.asarray(X_all, dtype=float))
    return EmbeddedSpace(X.copy(), X.shape[0])
