"""Labelled feature matrices and seeded holdout splits."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..features import FEATURE_NAMES


@dataclass(frozen=True)
class Dataset:
    """Feature rows with one label per row.

    ``classes`` fixes the class order (first appearance in ``labels`` unless
    given); ``y`` holds the matching integer codes.
    """

    rows: np.ndarray
    labels: tuple[str, ...]
    classes: tuple[str, ...] = ()
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.asarray(self.rows, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("rows must be a non-empty 2-D array")
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        labels = tuple(str(v) for v in self.labels)
        if len(labels) != X.shape[0]:
            raise ValueError("rows and labels differ in length")
        classes = tuple(self.classes) or tuple(dict.fromkeys(labels))
        unknown = set(labels) - set(classes)
        if unknown:
            raise ValueError(f"labels not among classes: {sorted(unknown)}")
        names = tuple(self.feature_names)
        if not names:
            names = FEATURE_NAMES if X.shape[1] == len(FEATURE_NAMES) else tuple(
                f"f{i}" for i in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ValueError("feature_names does not match the number of columns")
        object.__setattr__(self, "rows", X)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "feature_names", names)

    @property
    def y(self) -> np.ndarray:
        index = {c: i for i, c in enumerate(self.classes)}
        return np.array([index[v] for v in self.labels], dtype=np.int64)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    def standardization(self) -> tuple[np.ndarray, np.ndarray]:
        """Column means and (population) standard deviations, zero std -> 1."""
        mu = self.rows.mean(axis=0)
        sd = self.rows.std(axis=0)
        return mu, np.where(sd > 0, sd, 1.0)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.rows[idx], tuple(self.labels[i] for i in idx), self.classes,
                       self.feature_names)

    def relabel(self, mapping) -> "Dataset":
        """Map every label through ``mapping`` (a dict or a callable)."""
        f = mapping if callable(mapping) else mapping.__getitem__
        labels = tuple(f(v) for v in self.labels)
        return Dataset(self.rows, labels, (), self.feature_names)


def stratified_split(labels: Sequence[str], train_fraction: float = 0.5, seed=0
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Seeded per-class split into train and test indices (both sorted)."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    labels = list(labels)
    train = []
    for c in dict.fromkeys(labels):
        idx = np.array([i for i, v in enumerate(labels) if v == c])
        k = int(round(train_fraction * idx.size))
        k = min(max(k, 1), idx.size - 1) if idx.size > 1 else idx.size
        train.extend(rng.permutation(idx)[:k].tolist())
    train = np.array(sorted(train), dtype=np.int64)
    test = np.setdiff1d(np.arange(len(labels)), train)
    return train, test
