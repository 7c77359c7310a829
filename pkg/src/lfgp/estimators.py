"""Per-cluster statistic estimates and their sampling variances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError

_MIN_POINTS = {"mean": 1, "median": 1, "variance": 2, "skew": 3, "percentile": 1}


@dataclass(frozen=True)
class StatisticKind:
    """Which statistic of the conditional response law is modelled.

    ``name`` is one of ``mean``, ``median``, ``variance``, ``skew`` or
    ``percentile``; ``q`` is the quantile level for ``percentile`` only.
    """

    name: str
    q: float | None = None

    def __post_init__(self):
        if self.name not in _MIN_POINTS:
            raise ValueError(f"unknown statistic {self.name!r}")
        if self.name == "percentile":
            if self.q is None or not (0.0 < self.q < 1.0):
                raise ValueError(f"percentile level must lie strictly inside (0, 1), got {self.q}")
            object.__setattr__(self, "q", float(self.q))
        elif self.q is not None:
            raise ValueError(f"{self.name} takes no quantile level")

    @classmethod
    def percentile(cls, q: float) -> "StatisticKind":
        return cls("percentile", q)

    @classmethod
    def parse(cls, text: str) -> "StatisticKind":
        """Parse ``mean``, ``skew``, ``percentile:0.25`` and the like."""
        name, _, level = text.strip().lower().partition(":")
        if name == "percentile":
            if not level:
                raise ValueError("percentile needs a level, e.g. percentile:0.5")
            return cls.percentile(float(level))
        return cls(name)

    @property
    def label(self) -> str:
        return f"percentile:{self.q!r}" if self.name == "percentile" else self.name

    @property
    def min_points(self) -> int:
        return _MIN_POINTS[self.name]


MEAN = StatisticKind("mean")
MEDIAN = StatisticKind("median")
VARIANCE = StatisticKind("variance")
SKEW = StatisticKind("skew")


def _check_size(n: int, kind: StatisticKind) -> None:
    if n < kind.min_points:
        raise InsufficientDataError(
            f"{kind.label} needs at least {kind.min_points} values, got {n}"
        )


def _statistic_rows(samples: np.ndarray, kind: StatisticKind) -> np.ndarray:
    """Evaluate ``kind`` along the last axis of ``samples``."""
    n = samples.shape[-1]
    if kind.name == "mean":
        return samples.mean(axis=-1)
    if kind.name == "median":
        return np.median(samples, axis=-1)
    if kind.name == "percentile":
        # linear interpolation at rank q(n-1)+1
        return np.quantile(samples, kind.q, axis=-1, method="linear")
    if kind.name == "variance":
        return samples.var(axis=-1, ddof=1)
    # adjusted Fisher-Pearson skewness G1
    centered = samples - samples.mean(axis=-1, keepdims=True)
    m2 = np.mean(centered**2, axis=-1)
    m3 = np.mean(centered**3, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        g1 = np.where(m2 > 0, m3 / np.where(m2 > 0, m2, 1.0) ** 1.5, 0.0)
    return g1 * np.sqrt(n * (n - 1.0)) / (n - 2.0)


def estimate_statistic(values, kind: StatisticKind) -> float:
    """Plug-in estimate of ``kind`` from a sample."""
    values = np.asarray(values, dtype=float).ravel()
    _check_size(values.size, kind)
    return float(_statistic_rows(values, kind))


def estimate_variance(values, kind: StatisticKind, bootstrap_reps: int = 200, seed: int = 0) -> float:
    """Sampling variance of :func:`estimate_statistic`.

    ``s^2 / n`` for the mean; a seeded nonparametric bootstrap for everything else.
    """
    values = np.asarray(values, dtype=float).ravel()
    _check_size(values.size, kind)
    n = values.size
    if kind.name == "mean":
        return float(values.var(ddof=1) / n) if n > 1 else 0.0
    if bootstrap_reps < 1:
        raise ValueError("bootstrap_reps must be at least 1")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=(bootstrap_reps, n))
    stats = _statistic_rows(values[idx], kind)
    return float(stats.var(ddof=1)) if bootstrap_reps > 1 else 0.0


@dataclass(frozen=True)
class ClusterSummary:
    """Pseudo-observations: per-cluster estimates, their variances and the cluster sizes."""

    estimates: np.ndarray
    variances: np.ndarray
    sizes: np.ndarray

    def __post_init__(self):
        if not (self.estimates.shape == self.variances.shape == self.sizes.shape):
            raise ValueError("summary vectors must have equal length")
        if np.any(self.variances < 0):
            raise ValueError("variances must be non-negative")


def summarize_clusters(
    y, assignments, kind: StatisticKind, seed: int = 0, bootstrap_reps: int = 200
) -> ClusterSummary:
    """Estimate ``kind`` and its variance inside every cluster, in cluster-id order.

    ``assignments`` holds 0-based cluster ids; every id in ``0..m-1`` must occur.
    """
    y = np.asarray(y, dtype=float).ravel()
    assignments = np.asarray(assignments).ravel()
    if y.size != assignments.size:
        raise ValueError("responses and assignments differ in length")
    m = int(assignments.max()) + 1 if assignments.size else 0
    order = np.argsort(assignments, kind="stable")
    sizes = np.bincount(assignments, minlength=m)
    if np.any(sizes == 0):
        raise ValueError("cluster ids must be contiguous and non-empty")
    groups = np.split(y[order], np.cumsum(sizes)[:-1])
    streams = np.random.SeedSequence(seed).spawn(m)
    estimates = np.empty(m)
    variances = np.empty(m)
    for h, (vals, ss) in enumerate(zip(groups, streams)):
        estimates[h] = estimate_statistic(vals, kind)
        variances[h] = estimate_variance(vals, kind, bootstrap_reps, int(ss.generate_state(1)[0]))
    return ClusterSummary(estimates, variances, sizes)
