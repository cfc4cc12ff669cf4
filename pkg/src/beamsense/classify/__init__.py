"""Feature-based classifiers, evaluation metrics and holdout experiments."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dataset import Dataset, stratified_split
from .forest import (RandomForest, aggregate_votes, default_max_features, feature_importance,
                     train_forest)
from .metrics import Metrics, evaluate
from .serialize import dumps, loads, model_from_dict, model_to_dict
from .simple import GnbModel, KnnModel, train_gnb, train_knn
from .tree import DecisionTree, entropy, info_gain, train_tree

__all__ = [
    "Dataset", "DecisionTree", "GnbModel", "HoldoutResult", "KnnModel", "Metrics",
    "RandomForest", "aggregate_votes", "default_max_features", "dumps", "entropy", "evaluate",
    "feature_importance", "info_gain", "loads", "model_from_dict", "model_to_dict", "predict",
    "repeated_holdout", "stratified_split", "train_forest", "train_gnb", "train_knn",
    "train_tree", "TRAINERS",
]


def predict(model, features) -> str | list[str]:
    """Predict one label for a single feature vector, or a list for a matrix."""
    single = hasattr(features, "as_array") or np.ndim(features) == 1
    out = model.predict(features)
    return out[0] if single else out


TRAINERS: dict[str, Callable[[Dataset, int], object]] = {
    "tree": lambda ds, seed: train_tree(ds, max_depth=3),
    "forest": lambda ds, seed: train_forest(ds, n_trees=100, seed=seed),
    "knn": lambda ds, seed: train_knn(ds, k=3),
    "gnb": lambda ds, seed: train_gnb(ds),
}


@dataclass(frozen=True)
class HoldoutResult:
    name: str
    runs: tuple[Metrics, ...]

    def summary(self) -> dict:
        out = {"classifier": self.name, "repetitions": len(self.runs)}
        for key in ("accuracy", "macro_recall", "macro_f1"):
            v = np.array([getattr(m, key) for m in self.runs])
            out[key] = {"mean": float(v.mean()), "std": float(v.std())}
        return out


def repeated_holdout(dataset: Dataset, trainer: Callable[[Dataset, int], object] | str,
                     repetitions: int = 20, train_fraction: float = 0.5, seed=0,
                     name: str | None = None) -> HoldoutResult:
    """Train and score on ``repetitions`` seeded stratified splits.

    Split ``r`` and the model trained on it both use child ``r`` of ``seed``.
    """
    if isinstance(trainer, str):
        name = name or trainer
        trainer = TRAINERS[trainer]
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    base = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    runs = []
    for r in range(repetitions):
        child = np.random.SeedSequence(base.entropy, spawn_key=base.spawn_key + (r,))
        split_seed, model_seed = child.generate_state(2)
        tr, te = stratified_split(dataset.labels, train_fraction, int(split_seed))
        model = trainer(dataset.subset(tr), int(model_seed))
        pred = model.predict(dataset.rows[te])
        runs.append(evaluate(pred, [dataset.labels[i] for i in te], dataset.classes))
    return HoldoutResult(name or "model", tuple(runs))
