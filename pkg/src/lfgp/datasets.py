"""Synthetic Cube and Roll benchmarks with exact Beta-statistic oracles.

Both families share the response law ``y_i ~ Beta((n+i)/n, (4n-3i)/n)``
for ``i = 1..n``; they differ in how the index ``i`` is laid out in
feature space (a straight axis for Cube, a planar spiral for Roll).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import betainc

from .estimators import StatisticKind

FAMILIES = ("cube", "roll")


@dataclass
class Dataset:
    """Features ``X`` (n x d), responses ``y`` (n,) and generator metadata."""

    X: np.ndarray
    y: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.shape[0] != self.y.size:
            raise ValueError(f"{self.X.shape[0]} feature rows but {self.y.size} responses")

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class BetaParams:
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("Beta parameters must be positive")

    @classmethod
    def at_index(cls, i, n) -> "BetaParams":
        return cls((n + i) / n, (4 * n - 3 * i) / n)


def _beta_params(n: int) -> tuple[np.ndarray, np.ndarray]:
    i = np.arange(1, n + 1, dtype=float)
    return (n + i) / n, (4 * n - 3 * i) / n


def _sample_beta(rng: np.random.Generator, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # ratio of two gamma variates
    ga = rng.standard_gamma(a)
    gb = rng.standard_gamma(b)
    return ga / (ga + gb)


def _cube_features(n: int, rng_or_fill) -> np.ndarray:
    i = np.arange(1, n + 1, dtype=float)
    x1 = (-n + 2 * i) / n
    other = _fill_columns(n, rng_or_fill, 2)
    return np.column_stack([x1, other])


def _roll_features(n: int, rng_or_fill) -> np.ndarray:
    t = np.arange(1, n + 1, dtype=float) / n
    x1 = t * np.cos(2 * np.pi * t)
    x2 = t * np.sin(2 * np.pi * t)
    return np.column_stack([x1, x2, _fill_columns(n, rng_or_fill, 1)])


def _fill_columns(n, rng_or_fill, k):
    if isinstance(rng_or_fill, np.random.Generator):
        return rng_or_fill.uniform(0.0, 1.0, size=(n, k))
    return np.full((n, k), float(rng_or_fill))


def _generate(family: str, n: int, seed: int) -> Dataset:
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    X = _cube_features(n, rng) if family == "cube" else _roll_features(n, rng)
    a, b = _beta_params(n)
    y = _sample_beta(rng, a, b)
    return Dataset(X, y, {"generator": family, "seed": seed, "n": n})


def gen_cube(n: int, seed: int = 0) -> Dataset:
    """Cube: ``x1 = (2i - n)/n``, ``x2, x3 ~ U(0, 1)``."""
    return _generate("cube", n, seed)


def gen_roll(n: int, seed: int = 0) -> Dataset:
    """Roll: ``(t cos 2 pi t, t sin 2 pi t)`` with ``t = i/n``, ``x3 ~ U(0, 1)``."""
    return _generate("roll", n, seed)


def generate(family: str, n: int, seed: int = 0) -> Dataset:
    if family not in FAMILIES:
        raise ValueError(f"unknown dataset family {family!r}; expected one of {FAMILIES}")
    return _generate(family, n, seed)


def test_grid(family: str, n_star: int = 30) -> np.ndarray:
    """Feature rows at ``i = 1..n_star`` with the uniform columns pinned to 0.5."""
    if n_star < 1:
        raise ValueError("n_star must be at least 1")
    if family == "cube":
        return _cube_features(n_star, 0.5)
    if family == "roll":
        return _roll_features(n_star, 0.5)
    raise ValueError(f"unknown dataset family {family!r}")


test_grid.__test__ = False  # not a pytest test despite the name


def beta_quantile(params: BetaParams, q: float, tol: float = 1e-10) -> float:
    """Invert the regularized incomplete beta function by bisection."""
    if not 0.0 < q < 1.0:
        raise ValueError("quantile level must lie in (0, 1)")
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if betainc(params.a, params.b, mid) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def true_statistic(params: BetaParams, kind: StatisticKind) -> float:
    """Exact value of ``kind`` for ``Beta(a, b)``."""
    a, b = params.a, params.b
    s = a + b
    if kind.name == "mean":
        return a / s
    if kind.name == "variance":
        return a * b / (s**2 * (s + 1))
    if kind.name == "skew":
        return 2 * (b - a) * math.sqrt(s + 1) / ((s + 2) * math.sqrt(a * b))
    if kind.name == "median":
        return beta_quantile(params, 0.5)
    return beta_quantile(params, kind.q)


def true_curve(n_star: int, kind: StatisticKind) -> np.ndarray:
    """True statistic at every test-grid index ``i = 1..n_star`` (same for both families)."""
    return np.array([true_statistic(BetaParams.at_index(i, n_star), kind) for i in range(1, n_star + 1)])


def write_csv(dataset: Dataset, path) -> None:
    """Write ``x1,...,xd,y`` at full precision plus a ``<path>.meta`` sidecar."""
    path = Path(path)
    header = ",".join([f"x{j + 1}" for j in range(dataset.d)] + ["y"])
    data = np.column_stack([dataset.X, dataset.y])
    tmp = path.with_name(path.name + ".tmp")
    try:
        np.savetxt(tmp, data, delimiter=",", header=header, comments="", fmt="%.17g")
        meta_lines = [f"{k}={v}" for k, v in sorted(dataset.meta.items())]
        meta_lines.append(f"columns={header}")
        meta_tmp = path.with_name(path.name + ".meta.tmp")
        meta_tmp.write_text("\n".join(meta_lines) + "\n")
        os.replace(tmp, path)
        os.replace(meta_tmp, path.with_name(path.name + ".meta"))
    finally:
        for leftover in (tmp, path.with_name(path.name + ".meta.tmp")):
            if leftover.exists():
                leftover.unlink()


def read_csv(path) -> Dataset:
    """Read a dataset written by :func:`write_csv` (the sidecar is optional)."""
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if not header or header[-1] != "y":
        raise ValueError(f"{path}: expected header x1,...,xd,y")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    meta = {}
    sidecar = path.with_name(path.name + ".meta")
    if sidecar.exists():
        for line in sidecar.read_text().splitlines():
            key, _, value = line.partition("=")
            if key and key != "columns":
                meta[key] = value
    return Dataset(data[:, :-1], data[:, -1], meta)
