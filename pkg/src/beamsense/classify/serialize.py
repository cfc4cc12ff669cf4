"""Versioned JSON documents for trained models."""
from __future__ import annotations

import json

import numpy as np

from .forest import RandomForest
from .simple import GnbModel, KnnModel
from .tree import DecisionTree

FORMAT_VERSION = 1


def _tree_doc(t: DecisionTree) -> dict:
    return {
        "classes": list(t.classes),
        "feature_names": list(t.feature_names),
        "max_depth": t.max_depth,
        "feature": t.feature.tolist(),
        "threshold": [float(v) for v in t.threshold],
        "left": t.left.tolist(),
        "right": t.right.tolist(),
        "value": t.value.tolist(),
        "n_samples": t.n_samples.tolist(),
        "gain": [float(v) for v in t.gain],
    }


def _tree_from(d: dict) -> DecisionTree:
    return DecisionTree(
        feature=np.array(d["feature"], dtype=np.int64),
        threshold=np.array(d["threshold"], dtype=float),
        left=np.array(d["left"], dtype=np.int64),
        right=np.array(d["right"], dtype=np.int64),
        value=np.array(d["value"], dtype=float).reshape(len(d["feature"]), -1),
        n_samples=np.array(d["n_samples"], dtype=np.int64),
        gain=np.array(d["gain"], dtype=float),
        classes=tuple(d["classes"]),
        feature_names=tuple(d["feature_names"]),
        max_depth=d["max_depth"],
    )


def model_to_dict(model) -> dict:
    if isinstance(model, DecisionTree):
        body = {"kind": "decision_tree", "tree": _tree_doc(model)}
    elif isinstance(model, RandomForest):
        body = {"kind": "random_forest", "max_features": model.max_features,
                "aggregation": model.aggregation, "bootstrap": model.bootstrap,
                "seed": model.seed, "trees": [_tree_doc(t) for t in model.trees]}
    elif isinstance(model, KnnModel):
        body = {"kind": "knn", "k": model.k, "classes": list(model.classes),
                "feature_names": list(model.feature_names),
                "standardization": {"mean": model.mean.tolist(), "scale": model.scale.tolist()},
                "rows": model.rows.tolist(), "y": model.y.tolist()}
    elif isinstance(model, GnbModel):
        body = {"kind": "gaussian_nb", "classes": list(model.classes),
                "feature_names": list(model.feature_names), "priors": model.priors.tolist(),
                "means": model.means.tolist(), "variances": model.variances.tolist()}
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    return {"format_version": FORMAT_VERSION, **body}


def model_from_dict(doc: dict):
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format_version {doc.get('format_version')!r}")
    kind = doc.get("kind")
    if kind == "decision_tree":
        return _tree_from(doc["tree"])
    if kind == "random_forest":
        return RandomForest(tuple(_tree_from(t) for t in doc["trees"]), doc["max_features"],
                            doc["aggregation"], doc["bootstrap"], doc["seed"])
    if kind == "knn":
        st = doc["standardization"]
        return KnnModel(np.array(doc["rows"], dtype=float), np.array(doc["y"], dtype=np.int64),
                        doc["k"], np.array(st["mean"]), np.array(st["scale"]),
                        tuple(doc["classes"]), tuple(doc["feature_names"]))
    if kind == "gaussian_nb":
        return GnbModel(np.array(doc["priors"]), np.array(doc["means"]),
                        np.array(doc["variances"]), tuple(doc["classes"]),
                        tuple(doc["feature_names"]))
    raise ValueError(f"unknown model kind {kind!r}")


def dumps(model) -> str:
    return json.dumps(model_to_dict(model), indent=1)


def loads(text: str):
    return model_from_dict(json.loads(text))
