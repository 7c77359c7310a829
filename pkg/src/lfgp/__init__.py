"""Likelihood-free Gaussian process regression over size-constrained clusters."""

from .clustering import ClusterMetric, Clustering, clustering_objective, kmeans_objective, recursive_cluster
from .datasets import BetaParams, Dataset, gen_cube, gen_roll, test_grid, true_curve, true_statistic
from .errors import (
    DataIntegrityError,
    EmbeddingError,
    GraphConnectivityError,
    IllConditionedKernelError,
    InsufficientDataError,
    LfgpError,
    UnseenPointError,
)
from .estimators import MEAN, MEDIAN, SKEW, VARIANCE, StatisticKind, estimate_statistic, estimate_variance
from .gp import (
    PosteriorPrediction,
    RbfHyperparams,
    kernel_matrix,
    log_marginal_likelihood,
    optimize_hyperparams,
    rbf_kernel,
)
from .manifold import EmbeddingConfig, embed
from .model import LfgpModel, load_model, posterior_predict, predict_batch, save_model
from .trainer import FitConfig, FitReport, fit

__version__ = "0.1.0"

__all__ = [
    "BetaParams", "ClusterMetric", "Clustering", "DataIntegrityError", "Dataset", "EmbeddingConfig",
    "EmbeddingError", "FitConfig", "FitReport", "GraphConnectivityError", "IllConditionedKernelError",
    "InsufficientDataError", "LfgpError", "LfgpModel", "MEAN", "MEDIAN", "PosteriorPrediction",
    "RbfHyperparams", "SKEW", "StatisticKind", "UnseenPointError", "VARIANCE", "clustering_objective",
    "embed", "estimate_statistic", "estimate_variance", "fit", "gen_cube", "gen_roll", "kernel_matrix",
    "kmeans_objective", "load_model", "log_marginal_likelihood", "optimize_hyperparams",
    "posterior_predict", "predict_batch", "rbf_kernel", "recursive_cluster", "save_model",
    "test_grid", "true_curve", "true_statistic",
]
