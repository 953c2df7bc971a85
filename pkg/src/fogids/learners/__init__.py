"""Base classifiers. Every model exposes ``predict_proba(X)`` returning one
class distribution per row, plus ``n_features``, ``n_classes`` and ``schema_hash``."""

from .common import argmax_first, is_distribution
from .knn import KnnModel, predict_knn, train_knn
from .mlp import MlpModel, MlpParams, fit_mlp, init_mlp, predict_mlp, train_mlp
from .tree import TreeModel, TreeParams, gini, grow_tree, predict_tree, train_tree

__all__ = [
    "KnnModel", "MlpModel", "MlpParams", "TreeModel", "TreeParams", "argmax_first",
    "fit_mlp", "gini", "grow_tree", "init_mlp", "is_distribution", "predict_knn",
    "predict_mlp", "predict_tree", "train_knn", "train_mlp", "train_tree",
]
