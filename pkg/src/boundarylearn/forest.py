"""Random-forest boundary classifier emitting signed confidences.

Trees are grown with scikit-learn's CART implementation, then flattened into
plain arrays; prediction and serialization run on those arrays only, so a
model round-trips through JSON exactly.  Confidence is the mean leaf
positive-vote fraction mapped onto [-1, 1].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np
from sklearn.ensemble import RandomForestClassifier

from .graph import LabelState, RegionGraph
from .rng import sklearn_seed


class DegenerateTrainingError(ValueError):
    """Training set is empty or contains a single class."""


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 20
    min_leaf: int = 1
    features_per_split: Optional[int] = None  # None means ceil(sqrt(d))
    bootstrap: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ValueError("features_per_split must be >= 1")

    def resolve_features_per_split(self, d: int) -> int:
        fps = self.features_per_split
        if fps is None:
            fps = math.ceil(math.sqrt(d))
        if fps > d:
            raise ValueError(f"features_per_split {fps} exceeds feature dimension {d}")
        return fps


@dataclass(frozen=True)
class TreeArrays:
    """One decision tree as flat arrays; leaves have child index -1.

    ``counts[i]`` holds the (possibly weighted) training counts of the
    negative and positive class at node i.
    """

    children_left: np.ndarray
    children_right: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    counts: np.ndarray

    def positive_fraction(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        idx = np.zeros(n, dtype=np.int64)
        while True:
            left = self.children_left[idx]
            active = left >= 0
            if not active.any():
                break
            feat = np.where(active, self.feature[idx], 0)
            go_left = x[np.arange(n), feat] <= self.threshold[idx]
            nxt = np.where(go_left, left, self.children_right[idx])
            idx = np.where(active, nxt, idx)
        leaf = self.counts[idx]
        return leaf[:, 1] / leaf.sum(axis=1)


class ForestModel:
    """Trained forest; immutable once built.

    Trees are packed into concatenated node arrays so one prediction call
    walks every tree simultaneously with vectorized gathers.
    """

    def __init__(self, trees: Sequence[TreeArrays], config: ForestConfig,
                 training_size: int, feature_dim: int):
        if not trees:
            raise ValueError("a forest needs at least one tree")
        self.trees: List[TreeArrays] = list(trees)
        self.config = config
        self.training_size = training_size
        self.feature_dim = feature_dim
        self._pack()

    def _pack(self) -> None:
        offsets = np.cumsum([0] + [t.threshold.shape[0] for t in self.trees])
        self._roots = offsets[:-1]
        left, right = [], []
        for t, off in zip(self.trees, self._roots):
            left.append(np.where(t.children_left >= 0, t.children_left + off, -1))
            right.append(np.where(t.children_right >= 0, t.children_right + off, -1))
        self._left = np.concatenate(left)
        self._right = np.concatenate(right)
        self._feature = np.concatenate([t.feature for t in self.trees])
        self._threshold = np.concatenate([t.threshold for t in self.trees])
        counts = np.concatenate([t.counts for t in self.trees])
        self._positive_fraction = counts[:, 1] / counts.sum(axis=1)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def predict_confidence(self, x: np.ndarray) -> np.ndarray:
        """Signed confidence per row of x: 2 * mean positive fraction - 1."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.feature_dim:
            raise ValueError(
                f"expected {self.feature_dim}-dimensional features, got {x.shape[1]}"
            )
        n = x.shape[0]
        idx = np.broadcast_to(self._roots, (n, self.n_trees)).copy()
        rows = np.arange(n)[:, None]
        while True:
            left = self._left[idx]
            active = left >= 0
            if not active.any():
                break
            go_left = x[rows, self._feature[idx]] <= self._threshold[idx]
            nxt = np.where(go_left, left, self._right[idx])
            idx = np.where(active, nxt, idx)
        frac = self._positive_fraction[idx].mean(axis=1)
        return 2.0 * frac - 1.0

    def to_json(self) -> str:
        doc = {
            "format": 1,
            "classes": [-1, 1],
            "feature_dim": self.feature_dim,
            "training_size": self.training_size,
            "config": {
                "n_trees": self.config.n_trees,
                "max_depth": self.config.max_depth,
                "min_leaf": self.config.min_leaf,
                "features_per_split": self.config.features_per_split,
                "bootstrap": self.config.bootstrap,
                "rng_seed": self.config.rng_seed,
            },
            "trees": [
                {
                    "children_left": t.children_left.tolist(),
                    "children_right": t.children_right.tolist(),
                    "feature": t.feature.tolist(),
                    "threshold": t.threshold.tolist(),
                    "counts": t.counts.tolist(),
                }
                for t in self.trees
            ],
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "ForestModel":
        doc = json.loads(text)
        if doc.get("format") != 1 or doc.get("classes") != [-1, 1]:
            raise ValueError("unrecognized forest document")
        config = ForestConfig(**doc["config"])
        trees = [
            TreeArrays(
                children_left=np.asarray(t["children_left"], dtype=np.int64),
                children_right=np.asarray(t["children_right"], dtype=np.int64),
                feature=np.asarray(t["feature"], dtype=np.int64),
                threshold=np.asarray(t["threshold"], dtype=np.float64),
                counts=np.asarray(t["counts"], dtype=np.float64),
            )
            for t in doc["trees"]
        ]
        return cls(trees, config, int(doc["training_size"]), int(doc["feature_dim"]))


def _extract_tree(estimator) -> TreeArrays:
    t = estimator.tree_
    # sklearn >= 1.4 normalizes value to per-node fractions; scale back to
    # weighted counts so leaf vote fractions survive serialization.
    value = t.value[:, 0, :]
    sums = value.sum(axis=1, keepdims=True)
    if not np.allclose(sums, t.weighted_n_node_samples[:, None]):
        value = value * (t.weighted_n_node_samples[:, None] / sums)
    return TreeArrays(
        children_left=t.children_left.astype(np.int64),
        children_right=t.children_right.astype(np.int64),
        feature=np.maximum(t.feature.astype(np.int64), 0),
        threshold=t.threshold.astype(np.float64),
        counts=value.astype(np.float64),
    )


def train_forest_on_arrays(
    x: np.ndarray,
    y: np.ndarray,
    config: ForestConfig,
    sample_weight: Optional[np.ndarray] = None,
) -> ForestModel:
    """Fit a forest on an explicit design matrix with labels in {-1, +1}."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.shape[0] == 0:
        raise DegenerateTrainingError("training set is empty")
    classes = np.unique(y)
    if not np.array_equal(classes, [-1, 1]):
        if classes.size == 1:
            raise DegenerateTrainingError(
                f"training set contains a single class ({int(classes[0]):+d})"
            )
        raise ValueError("labels must be -1 or +1")

    clf = RandomForestClassifier(
        n_estimators=config.n_trees,
        criterion="gini",
        max_depth=config.max_depth,
        min_samples_leaf=config.min_leaf,
        max_features=config.resolve_features_per_split(x.shape[1]),
        bootstrap=config.bootstrap,
        random_state=sklearn_seed(config.rng_seed, "forest"),
    )
    clf.fit(x, y.astype(np.int64), sample_weight=sample_weight)
    trees = [_extract_tree(est) for est in clf.estimators_]
    return ForestModel(trees, config, training_size=x.shape[0], feature_dim=x.shape[1])


def train_forest(
    graph: RegionGraph,
    state: LabelState,
    config: ForestConfig,
    sample_weight: Optional[np.ndarray] = None,
) -> ForestModel:
    """Fit a forest on the labeled subset of a graph's boundary samples."""
    ids = np.fromiter(state.labeled_ids, dtype=np.int64, count=state.n_labeled)
    if ids.size == 0:
        raise DegenerateTrainingError("no labeled boundary samples")
    x = graph.features[ids]
    y = state.label_vector()
    return train_forest_on_arrays(x, y, config, sample_weight=sample_weight)


def predict_confidence(
    model: ForestModel, graph: RegionGraph, edge_ids: Sequence[int]
) -> np.ndarray:
    """Confidences for the given edges of a graph."""
    ids = np.asarray(edge_ids, dtype=np.int64)
    if ids.size == 0:
        return np.zeros(0)
    if ids.min() < 0 or ids.max() >= graph.n_edges:
        raise ValueError("edge id out of range")
    return model.predict_confidence(graph.features[ids])


def with_seed(config: ForestConfig, seed: int) -> ForestConfig:
    return replace(config, rng_seed=seed)
