"""Pairwise affinity graph over boundary samples.

Datapoints are the boundary samples themselves (not superpixels); affinity is
a Gaussian kernel with a diagonal covariance of per-feature variances,
sparsified to the union of each point's k nearest neighbors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
import scipy.sparse as sp

from .graph import LabelState, RegionGraph

DEFAULT_NEIGHBORS = 10
DEFAULT_VARIANCE_FLOOR = 1e-8


@dataclass(frozen=True)
class AffinityConfig:
    """Diagonal kernel covariance plus sparsification settings."""

    sigma_diag: np.ndarray
    neighbors_k: int = DEFAULT_NEIGHBORS
    epsilon_floor: float = DEFAULT_VARIANCE_FLOOR

    def __post_init__(self):
        sigma = np.asarray(self.sigma_diag, dtype=np.float64)
        if sigma.ndim != 1:
            raise ValueError("sigma_diag must be a flat vector")
        if self.epsilon_floor <= 0:
            raise ValueError("epsilon_floor must be positive")
        if np.any(sigma < self.epsilon_floor):
            raise ValueError("every variance must be >= epsilon_floor")
        if self.neighbors_k < 1:
            raise ValueError("neighbors_k must be >= 1")
        object.__setattr__(self, "sigma_diag", sigma)


@dataclass(frozen=True)
class AffinityGraph:
    """Sparse symmetric affinity matrix with its degree vector."""

    weights: sp.csr_matrix
    degrees: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        w = self.weights.tocsr()
        object.__setattr__(self, "weights", w)
        if self.degrees is None:
            object.__setattr__(self, "degrees", np.asarray(w.sum(axis=1)).ravel())

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def laplacian(self) -> sp.csr_matrix:
        """Graph Laplacian D - W."""
        return sp.diags(self.degrees) - self.weights


def estimate_sigma(
    graph: RegionGraph,
    floor: float = DEFAULT_VARIANCE_FLOOR,
    neighbors_k: int = DEFAULT_NEIGHBORS,
) -> AffinityConfig:
    """Per-feature population variance over all edge features, floored."""
    if graph.n_edges < 2:
        raise ValueError("need at least 2 boundary samples to estimate variances")
    sigma = graph.features.var(axis=0)
    return AffinityConfig(
        sigma_diag=np.maximum(sigma, floor),
        neighbors_k=neighbors_k,
        epsilon_floor=floor,
    )


def build_affinity(graph: RegionGraph, config: AffinityConfig) -> AffinityGraph:
    """Gaussian affinities sparsified to the symmetrized kNN graph.

    Each datapoint keeps its ``neighbors_k`` largest affinities; the union is
    symmetrized, so a pair survives if either side selected it.
    """
    x = graph.features
    if config.sigma_diag.shape[0] != x.shape[1]:
        raise ValueError(
            f"sigma has {config.sigma_diag.shape[0]} entries for "
            f"{x.shape[1]}-dimensional features"
        )
    n = x.shape[0]
    k = min(config.neighbors_k, n - 1)

    # Scaling by 1/sqrt(sigma) turns the kernel exponent into half the
    # squared euclidean distance in the scaled space.
    z = x / np.sqrt(config.sigma_diag)
    sq_norms = np.einsum("ij,ij->i", z, z)

    rows = np.empty(n * k, dtype=np.int64)
    cols = np.empty(n * k, dtype=np.int64)
    vals = np.empty(n * k, dtype=np.float64)
    chunk = max(1, int(2**22 // max(n, 1)))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d2 = sq_norms[start:stop, None] + sq_norms[None, :] - 2.0 * (z[start:stop] @ z.T)
        np.maximum(d2, 0.0, out=d2)
        idx = np.arange(start, stop)
        d2[np.arange(stop - start), idx] = np.inf
        # Stable sort keeps neighbor choice deterministic under ties.
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        sel = np.take_along_axis(d2, order, axis=1)
        out = slice(start * k, stop * k)
        rows[out] = np.repeat(idx, k)
        cols[out] = order.ravel()
        vals[out] = np.exp(-0.5 * sel).ravel()

    w = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    w = w.maximum(w.T)
    w.eliminate_zeros()
    return AffinityGraph(weights=w)


def partition_blocks(
    aff: AffinityGraph, state: LabelState
) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
    """Blocks (L_uu, W_ul) of the harmonic system on the current partition.

    L_uu keeps the full-graph degrees on its diagonal, i.e. it is the
    unlabeled principal submatrix of the global Laplacian, not the Laplacian
    of the unlabeled subgraph.  Rows follow ascending-id order.
    """
    if state.n_edges != aff.n:
        raise ValueError(
            f"label state covers {state.n_edges} datapoints, affinity has {aff.n}"
        )
    if state.n_labeled == 0:
        raise ValueError("cannot partition with no labeled datapoints")
    unl = np.fromiter(state.unlabeled_ids, dtype=np.int64, count=len(state.unlabeled_ids))
    lab = np.fromiter(state.labeled_ids, dtype=np.int64, count=len(state.labeled_ids))
    lap = aff.laplacian().tocsr()
    l_uu = lap[unl][:, unl].tocsr()
    w_ul = aff.weights[unl][:, lab].tocsr()
    return l_uu, w_ul


def save_matrix_market(aff: AffinityGraph, path) -> None:
    """Export W as a matrix-market file for external inspection."""
    from scipy.io import mmwrite

    mmwrite(str(path), aff.weights.tocoo())
