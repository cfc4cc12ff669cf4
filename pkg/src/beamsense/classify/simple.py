"""k-nearest-neighbour and Gaussian naive Bayes classifiers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .tree import _check_schema

VAR_FLOOR = 1e-9


@dataclass(frozen=True)
class KnnModel:
    """Stored training rows, standardised with the training mean and std."""

    rows: np.ndarray
    y: np.ndarray
    k: int
    mean: np.ndarray
    scale: np.ndarray
    classes: tuple[str, ...]
    feature_names: tuple[str, ...]

    def predict_index(self, X) -> np.ndarray:
        Z = (_check_schema(X, self.rows.shape[1]) - self.mean) / self.scale
        d2 = ((Z[:, None, :] - self.rows[None, :, :]) ** 2).sum(axis=2)
        # stable sort: equidistant rows are taken in training order
        near = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
        labels = self.y[near]
        counts = np.stack([(labels == c).sum(axis=1) for c in range(len(self.classes))], axis=1)
        return np.argmax(counts, axis=1)

    def predict(self, X) -> list[str]:
        return [self.classes[i] for i in self.predict_index(X)]


def train_knn(dataset: Dataset, k: int = 3) -> KnnModel:
    """Memorise standardised rows; votes are ties-to-lowest-class-index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > dataset.n:
        raise ValueError(f"k={k} exceeds the {dataset.n} training rows")
    mu, sd = dataset.standardization()
    return KnnModel((dataset.rows - mu) / sd, dataset.y, int(k), mu, sd, dataset.classes,
                    dataset.feature_names)


@dataclass(frozen=True)
class GnbModel:
    """Per-class priors, feature means and variances."""

    priors: np.ndarray
    means: np.ndarray  # (k, d)
    variances: np.ndarray  # (k, d)
    classes: tuple[str, ...]
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        priors = np.asarray(self.priors, dtype=float)
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        var = np.maximum(np.atleast_2d(np.asarray(self.variances, dtype=float)), VAR_FLOOR)
        if means.shape != var.shape or priors.shape != (means.shape[0],):
            raise ValueError("priors, means and variances have inconsistent shapes")
        if len(self.classes) != priors.size:
            raise ValueError("one class name per prior is required")
        if np.any(priors < 0) or not np.isclose(priors.sum(), 1.0):
            raise ValueError("priors must be non-negative and sum to 1")
        object.__setattr__(self, "priors", priors)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", var)
        if not self.feature_names:
            object.__setattr__(self, "feature_names",
                               tuple(f"f{i}" for i in range(means.shape[1])))

    def log_joint(self, X) -> np.ndarray:
        X = _check_schema(X, self.means.shape[1])
        diff = X[:, None, :] - self.means[None]
        ll = -0.5 * (np.log(2 * np.pi * self.variances)[None] + diff ** 2 / self.variances[None])
        with np.errstate(divide="ignore"):
            return np.log(self.priors)[None] + ll.sum(axis=2)

    def posterior(self, X) -> np.ndarray:
        lj = self.log_joint(X)
        lj = lj - lj.max(axis=1, keepdims=True)
        p = np.exp(lj)
        return p / p.sum(axis=1, keepdims=True)

    def predict_index(self, X) -> np.ndarray:
        return np.argmax(self.log_joint(X), axis=1)

    def predict(self, X) -> list[str]:
        return [self.classes[i] for i in self.predict_index(X)]


def train_gnb(dataset: Dataset) -> GnbModel:
    """Class frequencies, per-class means and population variances."""
    y, k = dataset.y, len(dataset.classes)
    priors = np.bincount(y, minlength=k) / y.size
    means = np.zeros((k, dataset.d))
    var = np.ones((k, dataset.d))
    for c in range(k):
        rows = dataset.rows[y == c]
        if rows.size:
            means[c] = rows.mean(axis=0)
            var[c] = rows.var(axis=0)
    return GnbModel(priors, means, var, dataset.classes, dataset.feature_names)
