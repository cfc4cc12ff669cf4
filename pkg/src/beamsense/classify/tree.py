"""Entropy-based decision trees."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset

_EPS = 1e-12


def entropy(labels) -> float:
    """Shannon entropy in bits, ``0 log 0 = 0``."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("entropy of an empty label set is undefined")
    _, counts = np.unique(labels, return_counts=True)
    return _entropy_counts(counts)


def _entropy_counts(counts) -> float:
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    p = counts[counts > 0] / n
    return float(max(0.0, -np.sum(p * np.log2(p))))


def info_gain(dataset: Dataset, feature_index: int, threshold: float) -> float:
    """Entropy of the labels minus the size-weighted entropy of both sides of
    ``x[feature_index] <= threshold``."""
    x = dataset.rows[:, feature_index]
    left = x <= threshold
    nl = int(left.sum())
    if nl == 0 or nl == x.size:
        raise ValueError("split leaves one side empty")
    y = dataset.y
    h = entropy(y)
    return h - (nl * entropy(y[left]) + (x.size - nl) * entropy(y[~left])) / x.size


def _best_split(X, y, k, features):
    """Highest-gain (feature, threshold, gain) over midpoints of ``features``.

    Features are scanned in the order given and thresholds in increasing
    order; a later candidate wins only with strictly larger gain.
    """
    n = y.size
    parent = _entropy_counts(np.bincount(y, minlength=k))
    best = None
    onehot = np.eye(k, dtype=np.int64)[y]
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        cuts = np.flatnonzero(xs[1:] > xs[:-1])
        if cuts.size == 0:
            continue
        cum = np.cumsum(onehot[order], axis=0)
        left = cum[cuts].astype(float)
        right = cum[-1] - left
        nl = left.sum(axis=1)
        nr = n - nl
        hl = _row_entropy(left, nl)
        hr = _row_entropy(right, nr)
        gains = parent - (nl * hl + nr * hr) / n
        i = int(np.argmax(gains >= gains.max() - _EPS))
        g = float(max(gains[i], 0.0))
        if best is None or g > best[2] + _EPS:
            thr = 0.5 * (xs[cuts[i]] + xs[cuts[i] + 1])
            best = (int(f), float(thr), g)
    return best


def _row_entropy(counts, totals):
    p = counts / totals[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=1)


@dataclass(frozen=True)
class DecisionTree:
    """Binary tree stored as flat arrays.

    Node ``i`` is a leaf when ``feature[i] == -1``; otherwise samples with
    ``x[feature[i]] <= threshold[i]`` go to ``left[i]`` and the rest to
    ``right[i]``.  ``value[i]`` holds the class frequencies of the training
    samples that reached the node.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    gain: np.ndarray
    classes: tuple[str, ...]
    feature_names: tuple[str, ...]
    max_depth: int | None = None

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.feature.size, dtype=int)
        for i in range(self.feature.size):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def leaf_index(self, X: np.ndarray) -> np.ndarray:
        X = _check_schema(X, self.n_features)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            i = node[active]
            go_left = X[active, self.feature[i]] <= self.threshold[i]
            node[active] = np.where(go_left, self.left[i], self.right[i])
            active = self.feature[node] >= 0
        return node

    def predict_proba(self, X) -> np.ndarray:
        return self.value[self.leaf_index(X)]

    def predict_index(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def predict(self, X) -> list[str]:
        return [self.classes[i] for i in self.predict_index(X)]


def _check_schema(X, d: int) -> np.ndarray:
    if hasattr(X, "as_array"):
        X = X.as_array()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != d:
        raise ValueError(f"expected {d} features per row, got shape {X.shape}")
    return X


def grow_tree(X, y, k, *, max_depth=None, min_samples=2, feature_sampler=None,
              classes=(), feature_names=()) -> DecisionTree:
    """Greedy top-down induction on integer-coded labels ``y`` in ``0..k-1``.

    A node becomes a leaf when it is pure, holds fewer than ``min_samples``
    rows, sits at ``max_depth``, or no threshold separates its rows.  A
    zero-gain split of an impure node is still taken: balanced interactions
    such as XOR only pay off one level further down.
    ``feature_sampler()`` returns the feature indices to scan at each node.
    """
    n, d = X.shape
    all_features = np.arange(d)
    nodes = []  # [feature, threshold, left, right, value, n, gain]

    def build(idx, depth):
        me = len(nodes)
        counts = np.bincount(y[idx], minlength=k)
        nodes.append([-1, 0.0, -1, -1, counts / idx.size, idx.size, 0.0])
        pure = np.count_nonzero(counts) <= 1
        if pure or idx.size < min_samples or (max_depth is not None and depth >= max_depth):
            return me
        feats = all_features if feature_sampler is None else feature_sampler()
        split = _best_split(X[idx], y[idx], k, feats)
        if split is None:
            return me
        f, thr, g = split
        mask = X[idx, f] <= thr
        nodes[me][0:2] = [f, thr]
        nodes[me][6] = g
        nodes[me][2] = build(idx[mask], depth + 1)
        nodes[me][3] = build(idx[~mask], depth + 1)
        return me

    build(np.arange(n), 0)
    return DecisionTree(
        feature=np.array([r[0] for r in nodes], dtype=np.int64),
        threshold=np.array([r[1] for r in nodes], dtype=float),
        left=np.array([r[2] for r in nodes], dtype=np.int64),
        right=np.array([r[3] for r in nodes], dtype=np.int64),
        value=np.vstack([r[4] for r in nodes]),
        n_samples=np.array([r[5] for r in nodes], dtype=np.int64),
        gain=np.array([r[6] for r in nodes], dtype=float),
        classes=tuple(classes) or tuple(str(i) for i in range(k)),
        feature_names=tuple(feature_names) or tuple(f"f{i}" for i in range(d)),
        max_depth=max_depth,
    )


def train_tree(dataset: Dataset, max_depth: int | None = 3, min_samples: int = 2) -> DecisionTree:
    """Train a tree on ``dataset``; ``max_depth=None`` grows until pure."""
    if max_depth is not None and max_depth < 1:
        raise ValueError("max_depth must be >= 1 or None")
    if min_samples < 2:
        raise ValueError("min_samples must be >= 2")
    return grow_tree(dataset.rows, dataset.y, len(dataset.classes), max_depth=max_depth,
                     min_samples=min_samples, classes=dataset.classes,
                     feature_names=dataset.feature_names)


def max_entropy(k: int) -> float:
    return math.log2(k) if k > 0 else 0.0
