"""Bagged random forests of entropy trees and their impurity-based importances."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .tree import DecisionTree, _check_schema, grow_tree

AGGREGATIONS = ("majority", "median")


@dataclass(frozen=True)
class RandomForest:
    trees: tuple[DecisionTree, ...]
    max_features: int
    aggregation: str = "majority"
    bootstrap: bool = True
    seed: int | None = None

    def __post_init__(self):
        if len(self.trees) < 1:
            raise ValueError("a forest needs at least one tree")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
        if not 1 <= self.max_features <= self.trees[0].n_features:
            raise ValueError("max_features out of range")

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def classes(self) -> tuple[str, ...]:
        return self.trees[0].classes

    @property
    def feature_names(self) -> tuple[str, ...]:
        return self.trees[0].feature_names

    def votes(self, X) -> np.ndarray:
        """``(n_rows, n_trees)`` class indices predicted by each tree."""
        X = _check_schema(X, len(self.feature_names))
        return np.column_stack([t.predict_index(X) for t in self.trees])

    def predict_index(self, X) -> np.ndarray:
        return aggregate_votes(self.votes(X), len(self.classes), self.aggregation)

    def predict(self, X) -> list[str]:
        return [self.classes[i] for i in self.predict_index(X)]


def aggregate_votes(votes: np.ndarray, k: int, aggregation: str = "majority") -> np.ndarray:
    """Combine per-tree class indices row by row.

    ``majority`` takes the most frequent index (ties to the lowest index);
    ``median`` takes the lower median of the sorted indices.
    """
    votes = np.atleast_2d(np.asarray(votes, dtype=np.int64))
    if aggregation == "majority":
        counts = np.stack([(votes == c).sum(axis=1) for c in range(k)], axis=1)
        return np.argmax(counts, axis=1)
    if aggregation == "median":
        s = np.sort(votes, axis=1)
        return s[:, (votes.shape[1] - 1) // 2]
    raise ValueError(f"aggregation must be one of {AGGREGATIONS}")


def default_max_features(d: int) -> int:
    return max(1, math.ceil(math.sqrt(d)))


def _tree_seed(seed, i: int) -> np.random.SeedSequence:
    base = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.SeedSequence(base.entropy, spawn_key=base.spawn_key + (i,))


def train_forest(dataset: Dataset, n_trees: int = 100, max_features: int | None = None,
                 seed=0, *, bootstrap: bool = True, max_depth: int | None = None,
                 min_samples: int = 2, aggregation: str = "majority") -> RandomForest:
    """Train ``n_trees`` unpruned trees on bootstrap resamples.

    At every node a fresh random subset of ``max_features`` features
    (default ``ceil(sqrt(d))``) is scanned in increasing index order.  Tree
    ``i`` draws all of its randomness from child ``i`` of ``seed``.
    """
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    d = dataset.d
    mf = default_max_features(d) if max_features is None else int(max_features)
    if not 1 <= mf <= d:
        raise ValueError(f"max_features must lie in [1, {d}]")
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
    X, y, k = dataset.rows, dataset.y, len(dataset.classes)
    trees = []
    for i in range(n_trees):
        rng = np.random.default_rng(_tree_seed(seed, i))
        idx = rng.integers(0, dataset.n, dataset.n) if bootstrap else np.arange(dataset.n)
        if mf == d:
            sampler = None
        else:
            def sampler(rng=rng):
                return np.sort(rng.choice(d, mf, replace=False))
        trees.append(grow_tree(X[idx], y[idx], k, max_depth=max_depth, min_samples=min_samples,
                               feature_sampler=sampler, classes=dataset.classes,
                               feature_names=dataset.feature_names))
    return RandomForest(tuple(trees), mf, aggregation, bootstrap,
                        seed if isinstance(seed, (int, np.integer)) else None)


def tree_importance(tree: DecisionTree) -> np.ndarray:
    """Per-feature sum of split gains weighted by the share of samples at the node."""
    out = np.zeros(tree.n_features)
    internal = np.flatnonzero(tree.feature >= 0)
    w = tree.n_samples[internal] / tree.n_samples[0]
    np.add.at(out, tree.feature[internal], w * tree.gain[internal])
    return out


def feature_importance(model) -> np.ndarray:
    """Mean decrease in impurity, averaged over trees and normalised to sum 1."""
    trees = model.trees if isinstance(model, RandomForest) else (model,)
    if not trees or not all(isinstance(t, DecisionTree) for t in trees):
        raise TypeError("feature_importance needs a trained forest or tree")
    total = np.mean([tree_importance(t) for t in trees], axis=0)
    s = total.sum()
    if s <= 0:
        raise ValueError("no tree in the model has a split with positive gain")
    return total / s
