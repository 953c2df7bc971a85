"""Classifier fusion rules and ensemble constructions.

Fusion operates on a prediction matrix ``p`` of shape (N learners, K classes),
or (N, n instances, K) for batches; the learner axis is always axis 0.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import SchemaError, TrainingError
from .learners.common import normalize_rows
from .learners.tree import TreeModel, TreeParams, grow_tree, presort

PRODUCT_FLOOR = 1e-6
WEIGHT_TOL = 1e-9


class Rule(str, enum.Enum):
    SUM = "sum"
    WEIGHTED_SUM = "weighted_sum"
    MEDIAN = "median"
    MINIMUM = "min"
    MAXIMUM = "max"
    PRODUCT = "product"
    MAJORITY = "majority"


FUSION_RULES = (Rule.SUM, Rule.WEIGHTED_SUM, Rule.MEDIAN, Rule.MINIMUM, Rule.MAXIMUM, Rule.PRODUCT)


def check_weights(weights, n):
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"expected {n} weights, got shape {w.shape}")
    if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
        raise ValueError("weights must be non-negative and sum to 1")
    return w


def hard_votes(p: np.ndarray) -> np.ndarray:
    """One-hot of each learner's argmax (lowest class on ties)."""
    k = p.shape[-1]
    return np.eye(k)[np.argmax(p, axis=-1)]


def combine(rule, p, weights=None) -> np.ndarray:
    """Fuse learner outputs class by class.

    sum: mean over learners; weighted_sum: sum_j w_j d_j; median/min/max:
    element-wise over learners; product: prod_j d_j; majority: fraction of
    learners whose argmax is the class.
    """
    rule = Rule(rule)
    p = np.asarray(p, dtype=np.float64)
    if p.ndim < 2 or p.shape[0] < 1:
        raise ValueError("prediction matrix needs at least one learner row")
    if rule is Rule.SUM:
        return p.mean(axis=0)
    if rule is Rule.WEIGHTED_SUM:
        w = check_weights(weights, p.shape[0])
        return np.tensordot(w, p, axes=(0, 0))
    if rule is Rule.MEDIAN:
        return np.median(p, axis=0)
    if rule is Rule.MINIMUM:
        return p.min(axis=0)
    if rule is Rule.MAXIMUM:
        return p.max(axis=0)
    if rule is Rule.PRODUCT:
        return np.prod(p, axis=0)
    return hard_votes(p).mean(axis=0)


def smooth_for_product(p, floor=PRODUCT_FLOOR):
    """Floor entries at ``floor`` and renormalise, so one zero cannot veto a class."""
    return normalize_rows(np.maximum(p, floor))


def decide(y) -> int:
    """Predicted class: argmax, lowest id on ties. An all-zero vector yields 0."""
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("cannot decide on an empty score vector")
    return int(np.argmax(y))


def is_degenerate(y) -> bool:
    return not np.any(np.asarray(y) > 0)


def to_distribution(y):
    """Renormalise combined scores; degenerate rows become uniform."""
    y = np.asarray(y, dtype=np.float64)
    s = y.sum(axis=-1, keepdims=True)
    uniform = np.full_like(y, 1.0 / y.shape[-1])
    return np.where(s > 0, y / np.where(s > 0, s, 1.0), uniform)


def bootstrap_sample(n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise TrainingError("cannot bootstrap an empty data set")
    return rng.integers(0, n, size=n)


def member_rngs(seed, index):
    """(bootstrap rng, feature rng) for member ``index``; independent of scheduling."""
    return np.random.default_rng([seed, index, 0]), np.random.default_rng([seed, index, 1])


# --------------------------------------------------------------------------
# ensemble model
# --------------------------------------------------------------------------

@dataclass
class EnsembleModel:
    kind: str                       # bagging | random_forest | adaboost | voting
    members: list
    rule: Rule = Rule.SUM
    weights: np.ndarray | None = None   # alphas for adaboost, fusion weights for voting
    seed: int | None = None
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.members:
            raise TrainingError("ensemble needs at least one member")
        self.rule = Rule(self.rule)
        hashes = {m.schema_hash for m in self.members}
        widths = {m.n_features for m in self.members}
        classes = {m.n_classes for m in self.members}
        if len(hashes) > 1 or len(widths) > 1 or len(classes) > 1:
            raise SchemaError("ensemble members do not share one input schema")
        if self.rule is Rule.WEIGHTED_SUM and self.kind != "adaboost":
            self.weights = check_weights(self.weights, len(self.members))

    @property
    def n_estimators(self):
        return len(self.members)

    @property
    def n_features(self):
        return self.members[0].n_features

    @property
    def n_classes(self):
        return self.members[0].n_classes

    @property
    def schema_hash(self):
        return self.members[0].schema_hash

    def member_matrix(self, X) -> np.ndarray:
        """Stacked member distributions, shape (N, n, K)."""
        return np.stack([m.predict_proba(X) for m in self.members])

    def combined_scores(self, X, rule=None, weights=None) -> np.ndarray:
        p = self.member_matrix(X)
        if self.kind == "adaboost":
            # alpha-weighted vote over hard member decisions
            a = np.asarray(self.weights, dtype=np.float64)
            return np.tensordot(a / a.sum(), hard_votes(p), axes=(0, 0))
        return fuse(p, rule or self.rule, self.weights if weights is None else weights)

    def predict_proba(self, X, rule=None, weights=None):
        return to_distribution(self.combined_scores(X, rule, weights))

    def predict(self, X, rule=None, weights=None):
        return np.argmax(self.combined_scores(X, rule, weights), axis=1)

    def get_state(self):
        meta = {"kind": self.kind, "rule": self.rule.value, "seed": self.seed,
                "config": self.config,
                "weights": None if self.weights is None else [float(v) for v in self.weights]}
        return meta, {}


def fuse(p, rule, weights=None):
    rule = Rule(rule)
    if rule is Rule.PRODUCT:
        p = smooth_for_product(p)
    return combine(rule, p, weights)


def predict_ensemble(model: EnsembleModel, instance):
    """(distribution, class id) for one instance."""
    x = np.asarray(instance, dtype=np.float64)
    if x.ndim != 1:
        raise SchemaError("predict_ensemble takes a single instance")
    y = model.combined_scores(x)[0]
    return to_distribution(y), decide(y)


# --------------------------------------------------------------------------
# trainers
# --------------------------------------------------------------------------

def _check_labels(data):
    if data.labels is None:
        raise SchemaError("training matrix has no labels")
    if data.n_rows == 0:
        raise TrainingError("cannot train on empty data")


def _train_bagged_trees(data, params, n_estimators, seed, bootstrap, kind, m_features=None):
    _check_labels(data)
    if n_estimators < 1:
        raise ValueError("n_estimators must be >= 1")
    sorted_index = presort(data.values)
    members = []
    for i in range(n_estimators):
        boot_rng, feat_rng = member_rngs(seed, i)
        if bootstrap:
            counts = np.bincount(bootstrap_sample(data.n_rows, boot_rng), minlength=data.n_rows)
        else:
            counts = np.ones(data.n_rows)
        p = params if m_features is None else TreeParams(**{**asdict(params), "max_features": m_features})
        tree = grow_tree(data.values, data.labels, data.n_classes, p, counts.astype(np.float64),
                         feat_rng, sorted_index)
        tree.schema_hash = data.schema_hash
        members.append(tree)
    cfg = {"params": asdict(params), "bootstrap": bootstrap, "m_features": m_features}
    return EnsembleModel(kind, members, Rule.SUM, None, seed, cfg)


def train_bagging(data, base_params: TreeParams = TreeParams(), n_estimators=10, seed=0,
                  bootstrap=True) -> EnsembleModel:
    return _train_bagged_trees(data, base_params, n_estimators, seed, bootstrap, "bagging")


def train_random_forest(data, base_params: TreeParams = TreeParams(), n_estimators=100,
                        m_features=None, seed=0) -> EnsembleModel:
    d = data.n_cols
    if m_features is None:
        m_features = max(1, int(math.isqrt(d)))
    if not 1 <= m_features <= d:
        raise ValueError(f"m_features must be in 1..{d}, got {m_features}")
    return _train_bagged_trees(data, base_params, n_estimators, seed, True, "random_forest",
                               m_features)


def samme_alpha(err: float, n_classes: int) -> float:
    return math.log((1.0 - err) / err) + math.log(n_classes - 1)


def train_adaboost(data, n_estimators=50, base_params: TreeParams = TreeParams(max_depth=1),
                   seed=0, weight_log=None) -> EnsembleModel:
    """SAMME boosting of shallow trees.

    ``weight_log``, if a list, receives the instance-weight vector after
    every round (for invariant checks).
    """
    _check_labels(data)
    K = data.n_classes
    if K < 2:
        raise TrainingError("boosting needs at least two classes")
    n = data.n_rows
    y = data.labels
    w = np.full(n, 1.0 / n)
    sorted_index = presort(data.values)
    members, alphas = [], []
    for t in range(n_estimators):
        _, feat_rng = member_rngs(seed, t)
        tree = grow_tree(data.values, y, K, base_params, w * n, feat_rng, sorted_index)
        tree.schema_hash = data.schema_hash
        miss = tree.predict(data.values) != y
        err = float(w[miss].sum() / w.sum())
        if err <= 0.0:
            # a perfect round outvotes everything before it
            members.append(tree)
            alphas.append(sum(alphas) + 1.0)
            break
        if err >= 1.0 - 1.0 / K:
            break
        alpha = samme_alpha(err, K)
        members.append(tree)
        alphas.append(alpha)
        w = w * np.exp(alpha * miss)
        w = w / w.sum()
        if not np.all(w > 0) or not np.all(np.isfinite(w)):
            raise TrainingError(f"instance weights lost positivity at round {t}")
        if weight_log is not None:
            weight_log.append(w.copy())
    if not members:
        raise TrainingError("first boosting round was no better than chance")
    cfg = {"params": asdict(base_params), "n_estimators": n_estimators}
    return EnsembleModel("adaboost", members, Rule.WEIGHTED_SUM, np.asarray(alphas), seed, cfg)


def train_voting(members, rule=Rule.SUM, weights=None) -> EnsembleModel:
    if len(members) < 2:
        raise ValueError("a voting ensemble needs at least two members")
    return EnsembleModel("voting", list(members), Rule(rule), weights)
