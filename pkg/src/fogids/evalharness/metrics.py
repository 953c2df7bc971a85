"""Accuracy, confusion matrix, per-class rates and timings."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import SchemaError


@dataclass(frozen=True)
class Metrics:
    class_names: tuple
    confusion: np.ndarray              # (K, K), rows = true class
    train_seconds: float = 0.0
    predict_seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion)) / self.total

    @property
    def precision(self) -> tuple:
        col = self.confusion.sum(axis=0)
        diag = np.diag(self.confusion)
        return tuple(float(d / c) if c else 0.0 for d, c in zip(diag, col))

    @property
    def recall(self) -> tuple:
        row = self.confusion.sum(axis=1)
        diag = np.diag(self.confusion)
        return tuple(float(d / r) if r else 0.0 for d, r in zip(diag, row))

    @property
    def fpr(self) -> float | None:
        """Normals flagged as attacks over all normals; binary task only."""
        if self.confusion.shape != (2, 2):
            return None
        normals = self.confusion[0].sum()
        return float(self.confusion[0, 1] / normals) if normals else 0.0

    def as_dict(self) -> dict:
        return {"accuracy": self.accuracy, "fpr": self.fpr, "total": self.total,
                "confusion": self.confusion.tolist(), "precision": list(self.precision),
                "recall": list(self.recall), "train_seconds": self.train_seconds,
                "predict_seconds": self.predict_seconds}


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("label and prediction arrays differ in length")
    flat = np.bincount(y_true * n_classes + y_pred, minlength=n_classes * n_classes)
    return flat.reshape(n_classes, n_classes)


def decisions(scores: np.ndarray, threshold: float | None = 0.5) -> np.ndarray:
    """Binary: attack iff attack score >= threshold. Otherwise first argmax."""
    if scores.shape[1] == 2 and threshold is not None:
        return (scores[:, 1] >= threshold).astype(np.int64)
    return np.argmax(scores, axis=1)


def evaluate(model, test, threshold: float | None = 0.5, train_seconds: float = 0.0) -> Metrics:
    """Score ``model`` on a labelled FeatureMatrix."""
    if test.n_rows == 0:
        raise ValueError("empty test set")
    if model.schema_hash != test.schema_hash:
        raise SchemaError(f"model schema {model.schema_hash} != test schema {test.schema_hash}")
    t0 = time.perf_counter()
    scores = model.predict_proba(test.values)
    dt = time.perf_counter() - t0
    pred = decisions(scores, threshold)
    cm = confusion_matrix(test.labels, pred, len(test.class_names))
    return Metrics(tuple(test.class_names), cm, train_seconds, dt)
