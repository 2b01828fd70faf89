"""Synthetic region-graph benchmark with planted bodies.

Superpixels sit on a 2-D or 3-D lattice; groundtruth bodies are grown by a
randomized multi-source flood fill, so each body is a connected patch.  Edge
features come from class-conditional Gaussian mixtures: the true-boundary
class is multi-modal (component means on a sphere), the false-boundary class
sits at the origin.  A small fraction of edges get features drawn from the
wrong class while keeping their label, emulating ambiguous boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .graph import BoundarySample, RegionGraph, SuperpixelNode
from .rng import child_rng

DEFAULT_LATTICE = (60, 50)


@dataclass(frozen=True)
class SynthConfig:
    n_bodies: int = 60
    lattice_dims: Tuple[int, ...] = DEFAULT_LATTICE
    n_superpixels: Optional[int] = None  # derived from lattice_dims when None
    feature_dim: int = 12
    n_subclasses: int = 3
    class_separation: float = 5.5
    label_noise: float = 0.02
    rng_seed: int = 0

    def __post_init__(self):
        dims = tuple(int(d) for d in self.lattice_dims)
        if len(dims) not in (2, 3) or any(d < 1 for d in dims):
            raise ValueError("lattice_dims must be a 2- or 3-tuple of positive ints")
        object.__setattr__(self, "lattice_dims", dims)
        n = math.prod(dims)
        if self.n_superpixels is None:
            object.__setattr__(self, "n_superpixels", n)
        elif self.n_superpixels != n:
            raise ValueError(
                f"n_superpixels {self.n_superpixels} != product of lattice dims {n}"
            )
        if not 1 <= self.n_bodies <= n:
            raise ValueError("n_bodies must be in [1, n_superpixels]")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.n_subclasses < 1:
            raise ValueError("n_subclasses must be >= 1")
        if self.class_separation <= 0:
            raise ValueError("class_separation must be positive")
        if not 0 <= self.label_noise < 0.5:
            raise ValueError("label_noise must be in [0, 0.5)")


def _lattice_edges(dims: Tuple[int, ...]) -> np.ndarray:
    """Undirected 4-/6-connectivity pairs for a C-order flattened lattice."""
    grid = np.arange(math.prod(dims)).reshape(dims)
    pairs = []
    for axis in range(len(dims)):
        a = np.moveaxis(grid, axis, 0)
        pairs.append(np.stack([a[:-1].ravel(), a[1:].ravel()], axis=1))
    return np.concatenate(pairs, axis=0)


def _plant_bodies(dims: Tuple[int, ...], n_bodies: int, rng: np.random.Generator) -> np.ndarray:
    """Assign every lattice cell to one of n_bodies connected regions."""
    n = math.prod(dims)
    edges = _lattice_edges(dims)
    neighbors = [[] for _ in range(n)]
    for u, v in edges:
        neighbors[u].append(int(v))
        neighbors[v].append(int(u))

    body = np.full(n, -1, dtype=np.int64)
    seeds = rng.choice(n, size=n_bodies, replace=False)
    frontier = []
    for b, s in enumerate(seeds):
        body[s] = b
        frontier.extend((int(nb), b) for nb in neighbors[s])

    # Random frontier growth: pop a uniformly random pending claim each step.
    while frontier:
        j = int(rng.integers(len(frontier)))
        frontier[j], frontier[-1] = frontier[-1], frontier[j]
        node, b = frontier.pop()
        if body[node] >= 0:
            continue
        body[node] = b
        for nb in neighbors[node]:
            if body[nb] < 0:
                frontier.append((nb, b))
    return body


def _mixture_means(config: SynthConfig) -> np.ndarray:
    """(n_subclasses, d) true-class component means on the separation sphere.

    Each mean concentrates its mass on a few coordinates (boundary-type
    features are individually informative), with direction drawn per
    subclass.  Means depend only on the config seed so that independently
    generated graphs share one feature distribution.
    """
    rng = child_rng(config.rng_seed, "mixture")
    active = min(3, config.feature_dim)
    means = np.zeros((config.n_subclasses, config.feature_dim))
    for c in range(config.n_subclasses):
        coords = rng.choice(config.feature_dim, size=active, replace=False)
        signs = rng.choice([-1.0, 1.0], size=active)
        means[c, coords] = signs / np.sqrt(active)
    return means * config.class_separation


def generate(config: SynthConfig, structure_seed: Optional[int] = None) -> RegionGraph:
    """Draw one benchmark graph; groundtruth is attached to nodes and edges."""
    seed = config.rng_seed if structure_seed is None else structure_seed
    rng = child_rng(seed, "structure")

    body = _plant_bodies(config.lattice_dims, config.n_bodies, rng)
    sizes = rng.integers(50, 151, size=config.n_superpixels)
    nodes = [
        SuperpixelNode(id=i, size=int(sizes[i]), true_body=int(body[i]))
        for i in range(config.n_superpixels)
    ]

    pairs = _lattice_edges(config.lattice_dims)
    labels = np.where(body[pairs[:, 0]] != body[pairs[:, 1]], 1, -1)

    true_means = _mixture_means(config)
    n_edges = pairs.shape[0]
    flip = rng.random(n_edges) < config.label_noise
    feature_class = np.where(flip, -labels, labels)
    # One mixture component per body pair: every face of the same interface
    # shares a sub-class, so averaging parallel faces stays in-component.
    bi, bj = body[pairs[:, 0]], body[pairs[:, 1]]
    pair_key = np.stack([np.minimum(bi, bj), np.maximum(bi, bj)], axis=1)
    uniq_pairs, pair_index = np.unique(pair_key, axis=0, return_inverse=True)
    pair_subclass = rng.integers(config.n_subclasses, size=uniq_pairs.shape[0])
    subclass = pair_subclass[pair_index]
    noise = rng.normal(size=(n_edges, config.feature_dim))
    means = np.where(
        (feature_class == 1)[:, None], true_means[subclass], 0.0
    )
    x = means + noise

    edges = [
        BoundarySample(
            id=i, u=int(pairs[i, 0]), v=int(pairs[i, 1]),
            x=x[i], true_label=int(labels[i]),
        )
        for i in range(n_edges)
    ]
    return RegionGraph(nodes, edges)


def train_test_pair(
    config: SynthConfig, seed_a: int, seed_b: int
) -> Tuple[RegionGraph, RegionGraph]:
    """Two draws sharing the mixture but with independent lattices/bodies."""
    return generate(config, structure_seed=seed_a), generate(config, structure_seed=seed_b)
