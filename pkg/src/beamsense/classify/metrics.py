"""Accuracy, per-class precision/recall/F1 and macro averages."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Metrics:
    classes: tuple[str, ...]
    confusion: np.ndarray  # rows: true class, columns: predicted class
    accuracy: float
    precision: dict[str, float]
    recall: dict[str, float]
    f1: dict[str, float]
    macro_recall: float
    macro_f1: float
    macro_precision: float
    no_predicted_positives: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "confusion": self.confusion.tolist(),
            "no_predicted_positives": list(self.no_predicted_positives),
        }


def evaluate(predictions: Sequence[str], labels: Sequence[str],
             classes: Sequence[str] | None = None) -> Metrics:
    """Score predictions against true labels.

    Macro averages run over the classes present in ``labels``.  A class that
    is never predicted gets precision 0 and is listed in
    ``no_predicted_positives``.
    """
    predictions = [str(p) for p in predictions]
    labels = [str(v) for v in labels]
    if len(predictions) != len(labels):
        raise ValueError("predictions and labels differ in length")
    if not labels:
        raise ValueError("nothing to evaluate")
    if classes is None:
        classes = tuple(dict.fromkeys(labels + predictions))
    classes = tuple(classes)
    index = {c: i for i, c in enumerate(classes)}
    missing = (set(labels) | set(predictions)) - set(classes)
    if missing:
        raise ValueError(f"labels not among classes: {sorted(missing)}")
    cm = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(labels, predictions):
        cm[index[t], index[p]] += 1
    tp = np.diag(cm).astype(float)
    pred_pos = cm.sum(axis=0).astype(float)
    support = cm.sum(axis=1).astype(float)
    prec, rec, f1, flagged = {}, {}, {}, []
    for i, c in enumerate(classes):
        if pred_pos[i] == 0:
            p = 0.0
            flagged.append(c)
        else:
            p = tp[i] / pred_pos[i]
        r = tp[i] / support[i] if support[i] > 0 else 0.0
        prec[c], rec[c] = float(p), float(r)
        f1[c] = float(2 * p * r / (p + r)) if p + r > 0 else 0.0
    present = [c for c in classes if support[index[c]] > 0]
    return Metrics(
        classes=classes,
        confusion=cm,
        accuracy=float(tp.sum() / len(labels)),
        precision=prec,
        recall=rec,
        f1=f1,
        macro_recall=float(np.mean([rec[c] for c in present])),
        macro_f1=float(np.mean([f1[c] for c in present])),
        macro_precision=float(np.mean([prec[c] for c in present])),
        no_predicted_positives=tuple(flagged),
    )
