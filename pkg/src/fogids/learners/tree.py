"""CART decision tree with Gini (default) or entropy splits."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import SchemaError, TrainingError
from . import _tree_kernels as K
from .common import check_width, normalize_rows


def gini(class_counts) -> float:
    counts = np.asarray(class_counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise ValueError("gini of an empty node")
    p = counts / total
    return float(1.0 - np.sum(p * p))


@dataclass(frozen=True)
class TreeParams:
    max_depth: int | None = None
    min_samples_split: int = 2
    criterion: str = "gini"
    # per-node feature subsample; None means all features
    max_features: int | None = None

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.criterion not in ("gini", "entropy"):
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if self.max_features is not None and self.max_features < 1:
            raise ValueError("max_features must be >= 1")


@dataclass
class TreeModel:
    feature: np.ndarray     # int64, -1 at leaves
    threshold: np.ndarray   # float64
    left: np.ndarray        # int64 child ids, -1 at leaves
    right: np.ndarray
    value: np.ndarray       # (n_nodes, K) weighted class histogram
    n_features: int
    n_classes: int
    params: TreeParams
    schema_hash: str = ""

    kind = "tree"

    @property
    def n_nodes(self):
        return len(self.feature)

    @property
    def depth(self):
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):  # preorder: parents precede children
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X):
        X = check_width(self, X)
        return K.apply_tree(X, self.feature, self.threshold, self.left, self.right)

    def predict_proba(self, X):
        return normalize_rows(self.value[self.apply(X)])

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def get_state(self):
        meta = {"params": asdict(self.params), "n_features": self.n_features,
                "n_classes": self.n_classes, "schema_hash": self.schema_hash}
        arrays = {"feature": self.feature, "threshold": self.threshold, "left": self.left,
                  "right": self.right, "value": self.value}
        return meta, arrays

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(arrays["feature"], arrays["threshold"], arrays["left"], arrays["right"],
                   arrays["value"], meta["n_features"], meta["n_classes"],
                   TreeParams(**meta["params"]), meta["schema_hash"])


def presort(X: np.ndarray) -> np.ndarray:
    """Per-feature stable argsort, shape (d, n). Shareable across trees on X."""
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int64))


def grow_tree(X, y, n_classes, params: TreeParams = TreeParams(), sample_weight=None,
              rng: np.random.Generator | None = None, sorted_index=None) -> TreeModel:
    """Grow a tree on arrays. Rows with zero weight are ignored.

    ``sample_weight`` acts as a multiplicity: min_samples_split compares
    against the summed weight of a node, so bootstrap counts reproduce
    training on the resampled multiset.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    n, d = X.shape
    if n == 0:
        raise TrainingError("cannot train a tree on empty data")
    w = np.ones(n) if sample_weight is None else np.ascontiguousarray(sample_weight, dtype=np.float64)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise TrainingError("sample weights must be finite and non-negative")
    active = w > 0
    if not active.any():
        raise TrainingError("all sample weights are zero")
    if params.max_features is not None and params.max_features > d:
        raise ValueError(f"max_features={params.max_features} exceeds feature count {d}")

    full = presort(X) if sorted_index is None else sorted_index
    if active.all():
        order = full.copy()
    else:
        order = np.ascontiguousarray(full[active[full]].reshape(d, -1))
    m = order.shape[1]
    crit = K.GINI if params.criterion == "gini" else K.ENTROPY
    max_depth = np.inf if params.max_depth is None else params.max_depth
    subsample = params.max_features is not None and params.max_features < d
    all_features = np.arange(d, dtype=np.int64)

    goes_left = np.zeros(n, dtype=np.bool_)
    buf = np.empty(m, dtype=np.int64)
    feature, threshold, left, right, value = [], [], [], [], []

    # (node id, start, end, depth); node ids assigned in preorder
    stack = [(0, 0, m, 0)]
    feature.append(-1); threshold.append(0.0); left.append(-1); right.append(-1); value.append(None)
    while stack:
        node, start, end, depth = stack.pop()
        hist = K.node_histogram(y, w, order, start, end, n_classes)
        value[node] = hist
        if depth >= max_depth or hist.sum() < params.min_samples_split or np.count_nonzero(hist) <= 1:
            continue
        # features with at least two distinct values in this node
        lo = X[order[:, start], all_features]
        hi = X[order[:, end - 1], all_features]
        varying = all_features[lo != hi]
        if varying.size == 0:
            continue
        if subsample:
            perm = rng.permutation(d)
            cand = perm[np.isin(perm, varying)][: params.max_features]
            cand = np.sort(cand)
        else:
            cand = varying
        f, t, _ = K.best_split(X, y, w, order, start, end, cand, n_classes, crit)
        if f < 0:
            continue
        n_left = K.partition(X, order, start, end, f, t, goes_left, buf)
        li = len(feature)
        ri = li + 1
        for _ in range(2):
            feature.append(-1); threshold.append(0.0); left.append(-1); right.append(-1); value.append(None)
        feature[node], threshold[node], left[node], right[node] = f, t, li, ri
        # right pushed first so the left subtree is grown first
        stack.append((ri, start + n_left, end, depth + 1))
        stack.append((li, start, start + n_left, depth + 1))

    return TreeModel(
        np.asarray(feature, dtype=np.int64), np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int64), np.asarray(right, dtype=np.int64),
        np.vstack(value), d, n_classes, params)


def train_tree(data, params: TreeParams = TreeParams(), sample_weight=None, rng=None) -> TreeModel:
    if data.n_rows == 0:
        raise TrainingError("cannot train a tree on empty data")
    if data.labels is None:
        raise SchemaError("training matrix has no labels")
    if params.max_features is not None and rng is None:
        rng = np.random.default_rng(0)
    model = grow_tree(data.values, data.labels, data.n_classes, params, sample_weight, rng)
    model.schema_hash = data.schema_hash
    return model


def predict_tree(model: TreeModel, instance) -> np.ndarray:
    x = np.asarray(instance, dtype=np.float64)
    if x.ndim != 1:
        raise SchemaError("predict_tree takes a single instance")
    return model.predict_proba(x)[0]
