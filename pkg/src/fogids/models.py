"""Model descriptors: plain dicts naming a learner and its hyperparameters.

A descriptor plus a seed fully determines a trained model, which is what
experiment rows, stage configs and bundle headers record.
"""

from __future__ import annotations

import json

from .ensemble import train_adaboost, train_bagging, train_random_forest, train_voting
from .learners import MlpParams, TreeParams, train_knn, train_mlp, train_tree

TREE = {"kind": "tree"}
KNN = {"kind": "knn", "k": 5}
MLP = {"kind": "mlp", "hidden": [64], "learning_rate": 0.01, "epochs": 50, "batch_size": 128}
RF = {"kind": "random_forest", "n_estimators": 50, "tree": {}}
BAGGING = {"kind": "bagging", "n_estimators": 25, "tree": {}}
ADABOOST = {"kind": "adaboost", "n_estimators": 50, "tree": {"max_depth": 3}}

STAGE1_DEFAULT = BAGGING
STAGE2_DEFAULT = {"kind": "voting", "rule": "sum", "members": [KNN, RF, BAGGING, ADABOOST]}

# Un-normalised stage-1 inputs span ~9 orders of magnitude; plain SGD at the
# default step diverges there, Adam's per-parameter scaling does not.
MLP_RAW = {**MLP, "optimizer": "adam", "learning_rate": 0.001, "epochs": 20}


def describe(desc: dict) -> str:
    return json.dumps(desc, sort_keys=True, separators=(",", ":"))


def _tree_params(d):
    return TreeParams(**(d or {}))


def train_model(desc: dict, data, seed: int = 0, cache: dict | None = None):
    """Train the model ``desc`` describes on ``data``.

    ``cache`` (optional) memoises trained models by (descriptor, seed,
    schema), so a voting ensemble reuses members already trained as
    standalone models in the same sweep.
    """
    key = (describe(desc), seed, data.schema_hash, data.n_rows, data.n_classes)
    if cache is not None and key in cache:
        return cache[key]
    kind = desc["kind"]
    opts = {k: v for k, v in desc.items() if k != "kind"}
    if kind == "tree":
        model = train_tree(data, _tree_params(opts))
    elif kind == "knn":
        model = train_knn(data, opts.get("k", 5))
    elif kind == "mlp":
        model = train_mlp(data, MlpParams(**{**opts, "seed": seed}))
    elif kind == "bagging":
        model = train_bagging(data, _tree_params(opts.get("tree")), opts.get("n_estimators", 10),
                              seed, opts.get("bootstrap", True))
    elif kind == "random_forest":
        model = train_random_forest(data, _tree_params(opts.get("tree")),
                                    opts.get("n_estimators", 100), opts.get("m_features"), seed)
    elif kind == "adaboost":
        model = train_adaboost(data, opts.get("n_estimators", 50),
                               _tree_params(opts.get("tree", {"max_depth": 1})), seed)
    elif kind == "voting":
        members = [train_model(m, data, seed, cache) for m in opts["members"]]
        model = train_voting(members, opts.get("rule", "sum"), opts.get("weights"))
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    if cache is not None:
        cache[key] = model
    return model


def short_name(desc: dict) -> str:
    names = {"tree": "DT", "knn": "KNN", "mlp": "MLP", "random_forest": "RF",
             "bagging": "Bagging", "adaboost": "AdaBoost"}
    if desc["kind"] == "voting":
        return "Voting(" + "+".join(short_name(m) for m in desc["members"]) + ")"
    return names[desc["kind"]]
