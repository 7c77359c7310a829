"""Alternating fit: re-cluster under the current length scales, then re-optimize.

The loop stops once the optimizer's gain on the current clustering is at
most ``epsilon`` nats, or after ``max_outer_iters`` rounds.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .clustering import ClusterMetric, recursive_cluster
from .errors import InsufficientDataError
from .estimators import MEAN, StatisticKind, summarize_clusters
from .gp import (
    DEFAULT_REL_JITTER,
    RbfHyperparams,
    log_marginal_likelihood,
    optimize_hyperparams,
    stable_kernel_matrix,
)
from .manifold import EmbeddingConfig, embed
from .model import EmbeddingLookup, LfgpModel, PosteriorPrediction, predict_batch  # noqa: F401

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ("n", "d", "n0", "epsilon", "seed", "m", "repetition_count", "wall_time_s", "final_lml")


@dataclass(frozen=True)
class FitConfig:
    n0: int
    epsilon: float = 1.0
    statistic: StatisticKind = MEAN
    init: RbfHyperparams | None = None
    max_outer_iters: int = 20
    seed: int = 0
    baseline: bool = False
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    restarts: int = 4
    bootstrap_reps: int = 200
    estimator_noise: bool = True

    def __post_init__(self):
        if self.n0 < 2:
            raise ValueError("n0 must be at least 2")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be at least 1")


@dataclass
class FitReport:
    repetition_count: int
    objective_trace: list
    wall_time: float
    cluster_count: int
    n: int
    d: int
    n0: int
    epsilon: float
    seed: int

    @property
    def final_lml(self) -> float:
        return self.objective_trace[-1]

    def csv_row(self) -> list:
        return [self.n, self.d, self.n0, repr(self.epsilon), self.seed, self.cluster_count,
                self.repetition_count, f"{self.wall_time:.6f}", repr(self.final_lml)]


def _column_scale(A: np.ndarray, fallback: np.ndarray | None = None) -> np.ndarray:
    s = A.std(axis=0) if A.shape[0] > 1 else np.zeros(A.shape[1])
    if fallback is None:
        fallback = np.ones(A.shape[1])
    return np.where(s > 0, s, fallback)


def _default_amplitude(y_hat: np.ndarray) -> float:
    var = float(np.var(y_hat))
    if var > 0:
        return var
    second = float(np.mean(y_hat**2))
    return second if second > 0 else 1.0


def _lml(y_hat, Z, params, noise=None) -> float:
    K, L = stable_kernel_matrix(Z, params, noise=noise)
    return log_marginal_likelihood(y_hat, K, L)


def fit(
    X: np.ndarray,
    y: np.ndarray,
    config: FitConfig,
    X_query: np.ndarray | None = None,
) -> tuple[LfgpModel, FitReport]:
    """Fit an LFGP model to ``(X, y)``.

    With an active embedding, ``X`` and ``X_query`` are embedded jointly and
    the model can afterwards predict exactly at the rows of ``X_query``.
    """
    started = time.perf_counter()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n, d = X.shape
    if y.size != n:
        raise ValueError(f"{n} feature rows but {y.size} responses")
    if n < config.n0:
        raise InsufficientDataError(f"need at least n0={config.n0} observations, got {n}")

    lookup = None
    feats = X
    if config.embedding.active:
        queries = np.empty((0, d)) if X_query is None else np.atleast_2d(np.asarray(X_query, dtype=float))
        space = embed(np.vstack([X, queries]), config.embedding)
        feats = space.points[:n]
        lookup = EmbeddingLookup(queries.copy(), space.points[n:].copy())

    theta = config.init
    if theta is not None and theta.dim != feats.shape[1]:
        raise ValueError("init hyperparameters do not match the feature dimension")
    cluster_scales = theta.length_scales if theta is not None else _column_scale(feats)
    theta_independent = config.baseline or 2 * config.n0 > n

    trace = []
    clustering = summary = None
    for it in range(config.max_outer_iters):
        if clustering is None or not theta_independent:
            metric = ClusterMetric.euclidean() if config.baseline else ClusterMetric.rescaled(cluster_scales)
            clustering = recursive_cluster(feats, config.n0, metric, config.seed)
            summary = summarize_clusters(y, clustering.assignments, config.statistic,
                                         seed=config.seed, bootstrap_reps=config.bootstrap_reps)
        Z, y_hat = clustering.centroids, summary.estimates
        noise = summary.variances if config.estimator_noise else None
        if theta is None:
            theta = RbfHyperparams(_default_amplitude(y_hat), _column_scale(Z, cluster_scales))
        theta_old = theta

        if y_hat.size >= 2:
            theta = optimize_hyperparams(y_hat, Z, theta_old, restarts=config.restarts,
                                         seed=config.seed + it, noise=noise)
        else:
            # one centroid: the amplitude optimum is y^2, length scales are unidentified
            theta = RbfHyperparams(max(float(y_hat[0] ** 2), 1e-12), theta_old.length_scales)
        new, old = _lml(y_hat, Z, theta, noise), _lml(y_hat, Z, theta_old, noise)
        trace.append(new)
        logger.info("outer iteration %d: m=%d lml=%.6g gain=%.3g", it + 1, y_hat.size, new, new - old)
        cluster_scales = theta.length_scales
        if new - old <= config.epsilon:
            break

    noise = summary.variances if config.estimator_noise else None
    K, _ = stable_kernel_matrix(clustering.centroids, theta, DEFAULT_REL_JITTER, noise=noise)
    model = LfgpModel(
        hyperparams=theta,
        centroids=clustering.centroids,
        pseudo_observations=summary.estimates,
        jitter=K.jitter,
        statistic=config.statistic,
        embedding=config.embedding,
        lookup=lookup,
        estimator_variances=summary.variances,
        cluster_sizes=summary.sizes,
        noise=noise,
    )
    report = FitReport(
        repetition_count=len(trace),
        objective_trace=trace,
        wall_time=time.perf_counter() - started,
        cluster_count=model.n_clusters,
        n=n,
        d=d,
        n0=config.n0,
        epsilon=config.epsilon,
        seed=config.seed,
    )
    return model, report


def cluster_count_bounds(n: int, n0: int) -> tuple[int, int]:
    """Range of leaf counts the size constraint allows for ``n >= n0`` points."""
    return max(1, n // (2 * n0 - 1)), max(1, n // n0)


def rmse(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return math.sqrt(float(np.mean((a - b) ** 2)))
