"""Exact brute-force k-nearest-neighbour classifier.

Distances are squared Euclidean with the sum of squared differences
computed by ``math.fsum``, so a distance does not depend on summation
order. Neighbours are ranked by (distance, training row index).

Search is two-phase: a BLAS expansion ``|q|^2 + |x|^2 - 2 q.x`` screens
candidates with a rigorous error margin, then candidates are re-scored
exactly. The result is identical to scoring every training row exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import SchemaError, TrainingError
from .common import check_width

_EPS = np.finfo(np.float64).eps


@dataclass
class KnnModel:
    X: np.ndarray
    y: np.ndarray
    k: int
    n_classes: int
    schema_hash: str = ""

    kind = "knn"

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.X.setflags(write=False)
        self._sqnorm = np.einsum("ij,ij->i", self.X, self.X)
        self._max_sqnorm = float(self._sqnorm.max()) if len(self.X) else 0.0

    @property
    def n_features(self):
        return self.X.shape[1]

    def neighbours(self, Q, chunk_bytes=64 << 20):
        """Indices of the k nearest training rows for each row of Q, nearest first."""
        Q = check_width(self, Q)
        n, k = len(self.X), self.k
        out = np.empty((len(Q), k), dtype=np.int64)
        step = max(1, chunk_bytes // (8 * max(n, 1)))
        d = self.X.shape[1]
        for s in range(0, len(Q), step):
            q = Q[s:s + step]
            qn = np.einsum("ij,ij->i", q, q)
            approx = qn[:, None] + self._sqnorm[None, :] - 2.0 * (q @ self.X.T)
            # bound on |approx - exact| for every pair of this query
            margin = (4.0 * (d + 3) + 8.0) * _EPS * (qn + self._max_sqnorm) + 1e-300
            kth = np.partition(approx, k - 1, axis=1)[:, k - 1]
            for i in range(len(q)):
                cand = np.flatnonzero(approx[i] <= kth[i] + 2.0 * margin[i])
                out[s + i] = self._rank_exact(q[i], cand)[:k]
        return out

    def _rank_exact(self, q, cand):
        diffs = self.X[cand] - q
        sq = diffs * diffs
        dist = np.fromiter((math.fsum(row) for row in sq), dtype=np.float64, count=len(cand))
        order = np.lexsort((cand, dist))
        return cand[order]

    def predict_proba(self, X):
        idx = self.neighbours(X)
        votes = self.y[idx]
        out = np.zeros((len(idx), self.n_classes))
        for c in range(self.n_classes):
            out[:, c] = np.count_nonzero(votes == c, axis=1)
        return out / self.k

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def get_state(self):
        meta = {"k": self.k, "n_classes": self.n_classes, "schema_hash": self.schema_hash}
        return meta, {"X": self.X, "y": self.y}

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(arrays["X"], arrays["y"], meta["k"], meta["n_classes"], meta["schema_hash"])


def train_knn(data, k: int = 5) -> KnnModel:
    if data.labels is None:
        raise SchemaError("training matrix has no labels")
    if data.n_rows == 0:
        raise TrainingError("cannot fit KNN on empty data")
    if not 1 <= k <= data.n_rows:
        raise ValueError(f"k={k} must be in 1..{data.n_rows}")
    return KnnModel(data.values.copy(), data.labels.astype(np.int64), k, data.n_classes,
                    data.schema_hash)


def predict_knn(model: KnnModel, instance) -> np.ndarray:
    x = np.asarray(instance, dtype=np.float64)
    if x.ndim != 1:
        raise SchemaError("predict_knn takes a single instance")
    return model.predict_proba(x)[0]
