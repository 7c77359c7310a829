"""Exception types raised across the package."""


class LfgpError(Exception):
    """Base class for all package errors."""


class IllConditionedKernelError(LfgpError):
    """Kernel matrix could not be Cholesky-factorized, even after jitter escalation."""


class InsufficientDataError(LfgpError, ValueError):
    """Too few observations for the requested estimate or fit."""


class GraphConnectivityError(LfgpError):
    """The k-nearest-neighbour graph splits into more than one component."""

    def __init__(self, n_components: int, k: int):
        self.n_components = n_components
        self.k = k
        super().__init__(
            f"k-NN graph (k={k}) has {n_components} connected components; "
            "increase k_neighbors or remove isolated groups"
        )


class EmbeddingError(LfgpError):
    """Manifold embedding failed (eigen-solver breakdown, non-finite output)."""


class UnseenPointError(LfgpError, ValueError):
    """A query point was not part of the model's transductive embedding."""


class DataIntegrityError(LfgpError, ValueError):
    """Rate data violates ordering or alignment requirements."""
