"""Gaussian-process mathematics over cluster centroids.

RBF covariance, kernel-matrix assembly with jitter escalation, the log
marginal likelihood (optionally with a fixed per-centroid noise diagonal)
and its gradient in log-parameter space, multi-start hyperparameter
ascent, and the posterior mean and variance at new inputs.  Every solve
goes through a Cholesky factor.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .errors import IllConditionedKernelError

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)

#: Relative jitter (fraction of the amplitude) tried first, and the ceiling.
DEFAULT_REL_JITTER = 1e-8
MAX_REL_JITTER = 1e-2

# Optimizer box, in natural-log units around the starting point.
_LOG_AMPLITUDE_SPAN = math.log(1e6)
_LOG_LENGTH_SPAN = math.log(1e3)
_RESTART_SPREAD = 1.0
_FAILED_OBJECTIVE = 1e25


@dataclass(frozen=True)
class RbfHyperparams:
    """Amplitude ``C`` and per-dimension length scales ``l`` of the RBF kernel."""

    amplitude: float
    length_scales: np.ndarray

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float)).copy()
        ls.setflags(write=False)
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "amplitude", float(self.amplitude))
        if not (self.amplitude > 0 and np.isfinite(self.amplitude)):
            raise ValueError(f"amplitude must be positive and finite, got {self.amplitude}")
        if ls.ndim != 1 or ls.size == 0 or not np.all((ls > 0) & np.isfinite(ls)):
            raise ValueError(f"length scales must be a non-empty vector of positive reals, got {ls}")

    @property
    def dim(self) -> int:
        return self.length_scales.size

    def to_log(self) -> np.ndarray:
        """Pack as ``[log C, log l_1, ..., log l_d]``."""
        return np.concatenate([[math.log(self.amplitude)], np.log(self.length_scales)])

    @classmethod
    def from_log(cls, log_theta: np.ndarray) -> "RbfHyperparams":
        log_theta = np.asarray(log_theta, dtype=float)
        return cls(math.exp(log_theta[0]), np.exp(log_theta[1:]))

    def __eq__(self, other):
        if not isinstance(other, RbfHyperparams):
            return NotImplemented
        return self.amplitude == other.amplitude and np.array_equal(
            self.length_scales, other.length_scales
        )

    def __hash__(self):
        return hash((self.amplitude, self.length_scales.tobytes()))


def _check_dim(n_features: int, params: RbfHyperparams) -> None:
    if n_features != params.dim:
        raise ValueError(
            f"dimension mismatch: points have {n_features} features, "
            f"kernel has {params.dim} length scales"
        )


def rbf_kernel(x_s, x_t, params: RbfHyperparams) -> float:
    """``C * exp(-A/2)`` with ``A`` the length-scale weighted squared distance."""
    x_s = np.atleast_1d(np.asarray(x_s, dtype=float))
    x_t = np.atleast_1d(np.asarray(x_t, dtype=float))
    if x_s.shape != x_t.shape:
        raise ValueError(f"dimension mismatch: {x_s.shape} vs {x_t.shape}")
    _check_dim(x_s.size, params)
    a = np.sum(((x_s - x_t) / params.length_scales) ** 2)
    return params.amplitude * math.exp(-0.5 * a)


def scaled_sqdist(X1: np.ndarray, X2: np.ndarray, length_scales: np.ndarray) -> np.ndarray:
    """Matrix of ``A(x_s, x_t)`` between the rows of ``X1`` and ``X2``."""
    return cdist(X1 / length_scales, X2 / length_scales, "sqeuclidean")


def cross_kernel(X1: np.ndarray, X2: np.ndarray, params: RbfHyperparams) -> np.ndarray:
    """RBF covariance between every row of ``X1`` and every row of ``X2``."""
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    _check_dim(X1.shape[1], params)
    _check_dim(X2.shape[1], params)
    return params.amplitude * np.exp(-0.5 * scaled_sqdist(X1, X2, params.length_scales))


@dataclass(frozen=True)
class KernelMatrix:
    """Symmetric kernel matrix over centroids with ``jitter`` already on the diagonal."""

    entries: np.ndarray
    jitter: float

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def cholesky(self) -> np.ndarray:
        """Lower Cholesky factor; raises :class:`IllConditionedKernelError` on failure."""
        try:
            return cholesky(self.entries, lower=True, check_finite=True)
        except (LinAlgError, ValueError) as exc:
            raise IllConditionedKernelError(
                f"Cholesky factorization failed for {self.size}x{self.size} kernel "
                f"with jitter {self.jitter:g}"
            ) from exc


def kernel_matrix(Z: np.ndarray, params: RbfHyperparams, jitter: float = 0.0) -> KernelMatrix:
    """Assemble ``K[s, t] = k(z_s, z_t)`` and add ``jitter`` to the diagonal."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[0] < 1:
        raise ValueError("need at least one centroid")
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    K = cross_kernel(Z, Z, params)
    if not np.allclose(K, K.T, rtol=0.0, atol=1e-12 * params.amplitude):
        raise ValueError("kernel matrix is not symmetric")
    K[np.diag_indices_from(K)] += jitter
    return KernelMatrix(K, float(jitter))


def stable_kernel_matrix(
    Z: np.ndarray,
    params: RbfHyperparams,
    rel_jitter: float = DEFAULT_REL_JITTER,
    max_rel_jitter: float = MAX_REL_JITTER,
    noise: np.ndarray | None = None,
) -> tuple[KernelMatrix, np.ndarray]:
    """Kernel matrix and its Cholesky factor, escalating jitter by 10x on failure.

    Jitter starts at ``rel_jitter * C`` and stops at ``max_rel_jitter * C``.
    ``noise``, when given, is a per-centroid variance added to the diagonal
    on top of the jitter.
    """
    rel = rel_jitter
    base = cross_kernel(Z, Z, params)
    if noise is not None:
        base[np.diag_indices_from(base)] += noise
    while True:
        jitter = rel * params.amplitude
        K = base.copy()
        K[np.diag_indices_from(K)] += jitter
        km = KernelMatrix(K, jitter)
        try:
            return km, km.cholesky()
        except IllConditionedKernelError:
            if rel * 10 > max_rel_jitter * (1 + 1e-9):
                raise
            rel *= 10
            logger.debug("escalating kernel jitter to %g * C", rel)


def log_marginal_likelihood(y_hat: np.ndarray, K: KernelMatrix, chol: np.ndarray | None = None) -> float:
    """``-(y^T K^{-1} y + log|K| + m log 2pi) / 2`` through the Cholesky factor."""
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    if y_hat.size != K.size:
        raise ValueError(f"dimension mismatch: {y_hat.size} observations, kernel of order {K.size}")
    L = K.cholesky() if chol is None else chol
    v = solve_triangular(L, y_hat, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return float(-0.5 * (v @ v + logdet + y_hat.size * LOG_2PI))


def lml_and_gradient(
    log_theta: np.ndarray,
    y_hat: np.ndarray,
    Z: np.ndarray,
    rel_jitter: float = DEFAULT_REL_JITTER,
    noise: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Log marginal likelihood and its gradient with respect to ``[log C, log l]``.

    The jitter is held at ``rel_jitter * C`` so the signal part of the kernel
    is ``C (R + r I)`` and its amplitude derivative is itself.  A fixed
    ``noise`` diagonal does not depend on the hyperparameters.
    """
    log_theta = np.asarray(log_theta, dtype=float)
    C = math.exp(log_theta[0])
    ls = np.exp(log_theta[1:])
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    m = y_hat.size

    diffs = [np.subtract.outer(Z[:, j], Z[:, j]) ** 2 / ls[j] ** 2 for j in range(Z.shape[1])]
    R = np.exp(-0.5 * np.sum(diffs, axis=0))
    signal = C * R
    signal[np.diag_indices_from(signal)] += rel_jitter * C
    K = signal if noise is None else signal + np.diag(noise)
    L = KernelMatrix(K, rel_jitter * C).cholesky()

    alpha = cho_solve((L, True), y_hat)
    lml = -0.5 * (y_hat @ alpha) - np.sum(np.log(np.diag(L))) - 0.5 * m * LOG_2PI

    K_inv = cho_solve((L, True), np.eye(m))
    W = np.outer(alpha, alpha) - K_inv
    grad = np.empty_like(log_theta)
    grad[0] = 0.5 * np.sum(W * signal)
    CR = C * R
    for j, D in enumerate(diffs):
        grad[j + 1] = 0.5 * np.sum(W * CR * D)
    return float(lml), grad


def _negated(y_hat, Z, rel_jitter, noise):
    def fun(log_theta):
        try:
            value, grad = lml_and_gradient(log_theta, y_hat, Z, rel_jitter, noise)
        except IllConditionedKernelError:
            return _FAILED_OBJECTIVE, np.zeros_like(log_theta)
        return -value, -grad

    return fun


def optimize_hyperparams(
    y_hat: np.ndarray,
    Z: np.ndarray,
    init: RbfHyperparams,
    *,
    restarts: int = 4,
    seed: int = 0,
    rel_jitter: float = DEFAULT_REL_JITTER,
    max_iter: int = 200,
    noise: np.ndarray | None = None,
) -> RbfHyperparams:
    """Maximize the log marginal likelihood over ``(C, l)`` in log space.

    L-BFGS-B with analytic gradients, started from ``init`` and from
    ``restarts`` log-uniform perturbations of it.  The result is never
    worse than ``init``.
    """
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if y_hat.size < 2:
        raise ValueError("hyperparameter optimization needs at least two centroids")
    if Z.shape[0] != y_hat.size:
        raise ValueError("centroid count does not match pseudo-observation count")
    _check_dim(Z.shape[1], init)

    x0 = init.to_log()
    span = np.r_[_LOG_AMPLITUDE_SPAN, np.full(init.dim, _LOG_LENGTH_SPAN)]
    bounds = list(zip(x0 - span, x0 + span))
    rng = np.random.default_rng(seed)
    starts = [x0] + [
        np.clip(x0 + rng.uniform(-_RESTART_SPREAD, _RESTART_SPREAD, x0.size), x0 - span, x0 + span)
        for _ in range(restarts)
    ]

    fun = _negated(y_hat, Z, rel_jitter, noise)
    init_value = fun(x0)[0]
    best_x, best_value = x0, init_value
    any_ok = init_value < _FAILED_OBJECTIVE
    for start in starts:
        if fun(start)[0] >= _FAILED_OBJECTIVE:
            continue
        any_ok = True
        res = minimize(fun, start, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": max_iter})
        if res.fun < best_value:
            best_x, best_value = res.x, float(res.fun)
    if not any_ok:
        raise IllConditionedKernelError("kernel could not be factorized at any optimizer start")
    return RbfHyperparams.from_log(best_x)


@dataclass(frozen=True)
class PosteriorPrediction:
    """Posterior mean and variance; scalars for one point, arrays for a batch."""

    mean: float | np.ndarray
    variance: float | np.ndarray


def posterior(
    X_star: np.ndarray,
    centroids: np.ndarray,
    params: RbfHyperparams,
    chol: np.ndarray,
    alpha_vec: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Batched posterior mean ``k*^T alpha`` and variance ``k** - k*^T K^{-1} k*``."""
    X_star = np.atleast_2d(np.asarray(X_star, dtype=float))
    k_star = cross_kernel(centroids, X_star, params)
    mean = k_star.T @ alpha_vec
    v = solve_triangular(chol, k_star, lower=True)
    var = params.amplitude - np.sum(v * v, axis=0)
    return mean, np.maximum(var, 0.0)
