"""Fitted LFGP model, posterior prediction and text serialization.

Models are stored as JSON documents.  Every real number is written as a
C99 hex-float string (``float.hex``) so a save/load round trip is
bit-exact; the Cholesky factor is rebuilt on load from the stored parts.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve

from .errors import UnseenPointError
from .estimators import StatisticKind
from .gp import KernelMatrix, PosteriorPrediction, RbfHyperparams, kernel_matrix, posterior
from .manifold import EmbeddingConfig

SCHEMA = "lfgp-model/1"


@dataclass(frozen=True)
class EmbeddingLookup:
    """Raw coordinates of the query points embedded alongside the training data."""

    raw: np.ndarray
    embedded: np.ndarray

    def map(self, X_star: np.ndarray) -> np.ndarray:
        index = {row.tobytes(): i for i, row in enumerate(np.ascontiguousarray(self.raw))}
        out = np.empty((X_star.shape[0], self.embedded.shape[1]))
        for r, row in enumerate(np.ascontiguousarray(X_star, dtype=float)):
            i = index.get(row.tobytes())
            if i is None:
                raise UnseenPointError(
                    f"query point {row.tolist()} was not part of the joint embedding; "
                    "embedding-based models only predict at points supplied when fitting"
                )
            out[r] = self.embedded[i]
        return out


@dataclass(frozen=True)
class LfgpModel:
    hyperparams: RbfHyperparams
    centroids: np.ndarray
    pseudo_observations: np.ndarray
    jitter: float
    statistic: StatisticKind
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    lookup: EmbeddingLookup | None = None
    estimator_variances: np.ndarray | None = None
    cluster_sizes: np.ndarray | None = None
    noise: np.ndarray | None = None
    chol: np.ndarray = field(init=False, repr=False, compare=False)
    alpha_vec: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        Z = np.atleast_2d(np.asarray(self.centroids, dtype=float))
        y = np.asarray(self.pseudo_observations, dtype=float).ravel()
        if Z.shape[0] != y.size:
            raise ValueError(f"{Z.shape[0]} centroids but {y.size} pseudo-observations")
        object.__setattr__(self, "centroids", Z)
        object.__setattr__(self, "pseudo_observations", y)
        K = kernel_matrix(Z, self.hyperparams, self.jitter)
        if self.noise is not None:
            noise = np.asarray(self.noise, dtype=float).ravel()
            if noise.size != y.size or np.any(noise < 0):
                raise ValueError("noise must be a non-negative vector, one entry per centroid")
            object.__setattr__(self, "noise", noise)
            K = KernelMatrix(K.entries + np.diag(noise), K.jitter)
        L = K.cholesky()
        object.__setattr__(self, "chol", L)
        object.__setattr__(self, "alpha_vec", cho_solve((L, True), y))
        if self.embedding.active and self.lookup is None:
            raise ValueError("an embedding-based model needs its query lookup")

    @property
    def n_clusters(self) -> int:
        return self.pseudo_observations.size

    @property
    def input_dim(self) -> int:
        """Dimension of raw query points."""
        if self.lookup is not None:
            return self.lookup.raw.shape[1]
        return self.centroids.shape[1]

    def features(self, X_star: np.ndarray) -> np.ndarray:
        """Map raw query points into the space the GP was fitted in."""
        X_star = np.atleast_2d(np.asarray(X_star, dtype=float))
        if X_star.shape[1] != self.input_dim:
            raise ValueError(
                f"dimension mismatch: model expects {self.input_dim} features, got {X_star.shape[1]}"
            )
        if self.embedding.active:
            return self.lookup.map(X_star)
        return X_star


def posterior_predict(x_star, model: LfgpModel) -> PosteriorPrediction:
    """Posterior mean and variance of the modelled statistic at one point."""
    x = np.asarray(x_star, dtype=float).ravel()
    feats = model.features(x[None, :])
    mean, var = posterior(feats, model.centroids, model.hyperparams, model.chol, model.alpha_vec)
    return PosteriorPrediction(float(mean[0]), float(var[0]))


def predict_batch(model: LfgpModel, X_star, chunk: int = 20000) -> PosteriorPrediction:
    """Posterior at every row of ``X_star``; fields are arrays of length ``n*``."""
    X_star = np.asarray(X_star, dtype=float)
    if X_star.size == 0:
        return PosteriorPrediction(np.empty(0), np.empty(0))
    feats = model.features(np.atleast_2d(X_star))
    means, variances = [], []
    for start in range(0, feats.shape[0], chunk):
        m, v = posterior(feats[start:start + chunk], model.centroids, model.hyperparams,
                         model.chol, model.alpha_vec)
        means.append(m)
        variances.append(v)
    return PosteriorPrediction(np.concatenate(means), np.concatenate(variances))


# --- serialization ----------------------------------------------------------


def _hex(values) -> list:
    return [float(v).hex() for v in np.asarray(values, dtype=float).ravel()]


def _unhex(values, shape=None) -> np.ndarray:
    arr = np.array([float.fromhex(v) for v in values], dtype=float)
    return arr.reshape(shape) if shape is not None else arr


def model_to_dict(model: LfgpModel) -> dict:
    doc = {
        "schema": SCHEMA,
        "statistic": {"name": model.statistic.name, "q": None if model.statistic.q is None else float(model.statistic.q).hex()},
        "hyperparams": {
            "amplitude": model.hyperparams.amplitude.hex(),
            "length_scales": _hex(model.hyperparams.length_scales),
        },
        "jitter": float(model.jitter).hex(),
        "centroids": {"shape": list(model.centroids.shape), "values": _hex(model.centroids)},
        "pseudo_observations": _hex(model.pseudo_observations),
        "embedding": {
            "method": model.embedding.method,
            "k_neighbors": model.embedding.k_neighbors,
            "target_dim": model.embedding.target_dim,
        },
    }
    if model.estimator_variances is not None:
        doc["estimator_variances"] = _hex(model.estimator_variances)
    if model.noise is not None:
        doc["noise"] = _hex(model.noise)
    if model.cluster_sizes is not None:
        doc["cluster_sizes"] = [int(s) for s in model.cluster_sizes]
    if model.lookup is not None:
        doc["embedding"]["lookup"] = {
            "raw": {"shape": list(model.lookup.raw.shape), "values": _hex(model.lookup.raw)},
            "embedded": {"shape": list(model.lookup.embedded.shape), "values": _hex(model.lookup.embedded)},
        }
    return doc


def model_from_dict(doc: dict) -> LfgpModel:
    if doc.get("schema") != SCHEMA:
        raise ValueError(f"unsupported model schema {doc.get('schema')!r}; expected {SCHEMA!r}")
    stat = doc["statistic"]
    q = None if stat["q"] is None else float.fromhex(stat["q"])
    hp = doc["hyperparams"]
    emb = doc["embedding"]
    lookup = None
    if "lookup" in emb:
        lk = emb["lookup"]
        lookup = EmbeddingLookup(
            _unhex(lk["raw"]["values"], lk["raw"]["shape"]),
            _unhex(lk["embedded"]["values"], lk["embedded"]["shape"]),
        )
    return LfgpModel(
        hyperparams=RbfHyperparams(float.fromhex(hp["amplitude"]), _unhex(hp["length_scales"])),
        centroids=_unhex(doc["centroids"]["values"], doc["centroids"]["shape"]),
        pseudo_observations=_unhex(doc["pseudo_observations"]),
        jitter=float.fromhex(doc["jitter"]),
        statistic=StatisticKind(stat["name"], q),
        embedding=EmbeddingConfig(emb["method"], emb["k_neighbors"], emb["target_dim"]),
        lookup=lookup,
        estimator_variances=_unhex(doc["estimator_variances"]) if "estimator_variances" in doc else None,
        cluster_sizes=np.array(doc["cluster_sizes"]) if "cluster_sizes" in doc else None,
        noise=_unhex(doc["noise"]) if "noise" in doc else None,
    )


def save_model(model: LfgpModel, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(json.dumps(model_to_dict(model), indent=1) + "\n")
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def load_model(path) -> LfgpModel:
    return model_from_dict(json.loads(Path(path).read_text()))
