"""Experiment specs and the runner that turns them into report rows."""

from __future__ import annotations

import os
import time
import traceback
from dataclasses import dataclass, field

import numpy as np

from .. import dataset as ds
from .. import models as M
from ..ensemble import FUSION_RULES, Rule, fuse, to_distribution
from ..errors import FogIDSError
from ..pipeline import fit_preprocessor
from .metrics import Metrics, confusion_matrix, decisions, evaluate

ROW_FIELDS = ("name", "model", "hyperparameters", "seed", "task", "train", "dataset", "rule",
              "accuracy", "fpr", "n_test", "train_seconds", "predict_seconds", "status", "error")

# model sets of the binary and category sweeps
BASE_MODELS = {"DT": M.TREE, "KNN": M.KNN, "MLP": M.MLP, "RF": M.RF,
               "Bagging": M.BAGGING, "AdaBoost": M.ADABOOST}
VOTING_SETS = (("DT", "KNN", "MLP"), ("RF", "Bagging", "AdaBoost"),
               ("KNN", "RF", "Bagging", "AdaBoost"), ("MLP", "RF", "Bagging", "AdaBoost"),
               ("KNN", "MLP", "RF", "Bagging"))
NUMERIC_FIELDS = ("accuracy", "fpr", "n_test", "train_seconds", "predict_seconds")
WEIGHT_SAMPLE = 5000


def voting(names, rule="sum", base=BASE_MODELS):
    return {"kind": "voting", "rule": rule, "members": [base[n] for n in names]}


@dataclass
class ExperimentSpec:
    task: str                          # "binary" | "category"
    model: dict
    seed: int
    train: str                         # path to the training file
    tests: dict                        # dataset name -> path
    keep: tuple = ds.DEFAULT_KEEP
    normalize: bool = False
    rule_sweep: bool = False
    threshold: float = 0.5
    name: str = ""

    def __post_init__(self):
        if self.task not in ("binary", "category"):
            raise ValueError(f"unknown task {self.task!r}")
        if not isinstance(self.seed, (int, np.integer)) or isinstance(self.seed, bool):
            raise ValueError("seed is mandatory and must be an int")
        if not self.name:
            self.name = M.short_name(self.model)

    def validate(self):
        missing = [p for p in [self.train, *self.tests.values()] if not os.path.exists(p)]
        if missing:
            raise FileNotFoundError(f"missing data file(s): {', '.join(missing)}")

    def label_task(self):
        return ds.binary_task() if self.task == "binary" else ds.category_task()


def _row(spec, dataset="", rule="", **kw):
    row = dict.fromkeys(ROW_FIELDS, "")
    row.update(dict.fromkeys(NUMERIC_FIELDS))
    row.update(name=spec.name, model=spec.model["kind"], hyperparameters=M.describe(spec.model),
               seed=int(spec.seed), task=spec.task, train=os.path.basename(spec.train),
               dataset=dataset, rule=rule, status="ok")
    row.update(kw)
    return row


def _metric_row(spec, dataset, rule, m: Metrics, train_seconds):
    return _row(spec, dataset, rule, accuracy=m.accuracy, fpr=m.fpr, n_test=m.total,
                train_seconds=train_seconds, predict_seconds=m.predict_seconds)


def load_records(path, records_cache=None):
    if records_cache is not None and path in records_cache:
        return records_cache[path]
    recs = ds.parse_records(path)
    if records_cache is not None:
        records_cache[path] = recs
    return recs


def sweep_weights(model, data, seed):
    """Weighted-sum weights: member accuracy on a seeded training subsample, normalised."""
    rng = np.random.default_rng([seed, 7])
    rows = np.arange(data.n_rows)
    if data.n_rows > WEIGHT_SAMPLE:
        rows = np.sort(rng.choice(data.n_rows, WEIGHT_SAMPLE, replace=False))
    P = model.member_matrix(data.values[rows])
    acc = (np.argmax(P, axis=2) == data.labels[rows][None, :]).mean(axis=1)
    if acc.sum() == 0:
        return np.full(len(acc), 1.0 / len(acc))
    return acc / acc.sum()


def run_experiment(spec: ExperimentSpec, cache=None, records_cache=None) -> list[dict]:
    """Train per ``spec`` and evaluate on every test file.

    A failure anywhere becomes one row with status ``failed``; the caller's
    sweep carries on.
    """
    try:
        spec.validate()
        task = spec.label_task()
        train = load_records(spec.train, records_cache)
        pre = fit_preprocessor(train, spec.keep, spec.normalize, task)
        data = pre.matrix(train, task)
        t0 = time.perf_counter()
        model = M.train_model(spec.model, data, spec.seed, cache)
        train_seconds = time.perf_counter() - t0
        sweep = spec.rule_sweep and spec.model["kind"] == "voting"
        weights = sweep_weights(model, data, spec.seed) if sweep else None
        rows = []
        for name, path in spec.tests.items():
            test = pre.matrix(load_records(path, records_cache), task)
            if not sweep:
                m = evaluate(model, test, spec.threshold if spec.task == "binary" else None,
                             train_seconds)
                rows.append(_metric_row(spec, name, spec.model.get("rule", ""), m, train_seconds))
                continue
            if test.n_rows == 0:
                raise ValueError("empty test set")
            t0 = time.perf_counter()
            P = model.member_matrix(test.values)
            member_seconds = time.perf_counter() - t0
            for rule in FUSION_RULES:
                t1 = time.perf_counter()
                w = weights if rule is Rule.WEIGHTED_SUM else None
                scores = to_distribution(fuse(P, rule, w))
                dt = member_seconds + time.perf_counter() - t1
                pred = decisions(scores, spec.threshold if spec.task == "binary" else None)
                m = Metrics(task.class_names, confusion_matrix(test.labels, pred, len(task.class_names)),
                            train_seconds, dt)
                rows.append(_metric_row(spec, name, rule.value, m, train_seconds))
        return rows
    except (FogIDSError, ValueError, FileNotFoundError, FloatingPointError) as exc:
        return [_row(spec, ",".join(spec.tests), status="failed",
                     error=f"{type(exc).__name__}: {exc}".splitlines()[0])]
    except Exception as exc:  # unexpected: still recorded, with the trace's last frame
        where = traceback.extract_tb(exc.__traceback__)[-1]
        return [_row(spec, ",".join(spec.tests), status="failed",
                     error=f"{type(exc).__name__}: {exc} ({os.path.basename(where.filename)}:{where.lineno})")]


def binary_sweep(train, tests, seed=0, include_voting=True) -> list[ExperimentSpec]:
    """Stage-1 model set: base learners and ensembles, no normalisation."""
    base = {**BASE_MODELS, "MLP": M.MLP_RAW}
    specs = [ExperimentSpec("binary", d, seed, train, tests, name=n) for n, d in base.items()]
    if include_voting:
        specs += [ExperimentSpec("binary", voting(v, base=base), seed, train, tests,
                                 name="Voting(" + "+".join(v) + ")") for v in VOTING_SETS]
    return specs


def category_sweep(train, tests, seed=0, include_voting=True, rule_sweep=True) -> list[ExperimentSpec]:
    """Stage-2 model set: attack-only training, min-max normalisation."""
    specs = [ExperimentSpec("category", d, seed, train, tests, normalize=True, name=n)
             for n, d in BASE_MODELS.items()]
    if include_voting:
        specs += [ExperimentSpec("category", voting(v), seed, train, tests, normalize=True,
                                 rule_sweep=rule_sweep, name="Voting(" + "+".join(v) + ")")
                  for v in VOTING_SETS]
    return specs


def run_all(specs, cache=None, records_cache=None, progress=None) -> list[dict]:
    cache = {} if cache is None else cache
    records_cache = {} if records_cache is None else records_cache
    rows = []
    for spec in specs:
        out = run_experiment(spec, cache, records_cache)
        if progress:
            progress(spec, out)
        rows.extend(out)
    return rows


@dataclass
class GatedResult:
    """Stage-2 quality on what stage 1 actually forwards."""
    flagged: int
    false_positives: int          # normals forwarded
    missed_attacks: int           # attacks stage 1 let through
    flagged_attacks: Metrics      # category metrics on forwarded true attacks
    end_to_end_accuracy: float    # correct category over all attacks; missed count as wrong
    extra: dict = field(default_factory=dict)


def pipeline_gated(stage1, stage2, records) -> GatedResult:
    cat = ds.category_task()
    s1 = stage1.decisions(stage1.scores(records))
    attack = np.array([r.label != "normal" for r in records])
    flagged = np.flatnonzero(s1 == 1)
    fwd_attacks = [records[i] for i in flagged if attack[i]]
    k = len(cat.class_names)
    if fwd_attacks:
        m = stage2.preprocessor.matrix(fwd_attacks, cat)
        pred = stage2.decisions(stage2.model.predict_proba(m.values))
        cm = confusion_matrix(m.labels, pred, k)
    else:
        cm = np.zeros((k, k), dtype=np.int64)
    n_attacks = int(attack.sum())
    return GatedResult(
        flagged=len(flagged), false_positives=int((~attack[flagged]).sum()),
        missed_attacks=int((attack & (s1 == 0)).sum()),
        flagged_attacks=Metrics(cat.class_names, cm),
        end_to_end_accuracy=float(np.trace(cm)) / n_attacks if n_attacks else 0.0)
