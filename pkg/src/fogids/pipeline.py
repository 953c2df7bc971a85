"""Two-level classification: binary anomaly detection at the fog, attack
categorisation in the cloud, with alert emission."""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import dataset as ds
from .errors import FogIDSError, SchemaError
from .models import STAGE1_DEFAULT, STAGE2_DEFAULT, train_model
from .netsvc import protocol as proto
from .serialize import dumps_model, loads_model


@dataclass(frozen=True)
class Preprocessor:
    """Fitted encoding policy: schema vocabularies, kept features, optional min-max scaling."""

    schema: ds.FeatureSchema
    normalizer: ds.Normalizer | None = None

    @property
    def columns(self):
        return tuple(self.schema.columns())

    @property
    def preprocessing(self):
        return self.normalizer.fingerprint if self.normalizer else ""

    @property
    def schema_hash(self):
        return ds.schema_hash(self.columns, self.preprocessing)

    def transform(self, records) -> ds.FeatureMatrix:
        m = ds.encode(records, self.schema)
        return ds.apply_normalizer(self.normalizer, m) if self.normalizer else m

    def matrix(self, records, task: ds.LabelTask) -> ds.FeatureMatrix:
        rows, ids = ds.map_labels(records, task)
        m = self.transform([records[i] for i in rows])
        return replace(m, labels=ids, class_names=task.class_names)

    def vector(self, record) -> np.ndarray:
        return self.transform([record]).values[0]


def fit_preprocessor(train_records, keep=ds.DEFAULT_KEEP, normalize=False, task=None) -> Preprocessor:
    """Fit vocabularies on ``train_records`` and, if asked, a normaliser.

    With ``task`` given the normaliser is fitted on the rows that task keeps
    (attack-only rows for the category task).
    """
    schema = ds.FeatureSchema(keep=tuple(keep)).fit(train_records)
    pre = Preprocessor(schema)
    if normalize:
        rows = ds.map_labels(train_records, task)[0] if task else range(len(train_records))
        norm = ds.fit_normalizer(pre.transform([train_records[i] for i in rows]))
        pre = Preprocessor(schema, norm)
    return pre


@dataclass(frozen=True)
class StageConfig:
    task: str                        # "binary" (stage 1) or "category" (stage 2)
    keep: tuple = ds.DEFAULT_KEEP
    normalize: bool = False
    threshold: float = 0.5           # stage 1 only: anomaly iff attack score >= threshold
    model: dict = field(default_factory=dict)

    @classmethod
    def stage1(cls, **kw):
        return cls("binary", **{"normalize": False, "model": STAGE1_DEFAULT, **kw})

    @classmethod
    def stage2(cls, **kw):
        return cls("category", **{"normalize": True, "model": STAGE2_DEFAULT, **kw})

    def label_task(self):
        return ds.binary_task() if self.task == "binary" else ds.category_task()


@dataclass
class Stage:
    config: StageConfig
    preprocessor: Preprocessor
    model: object
    model_id: str = ""

    def __post_init__(self):
        if self.model.schema_hash != self.preprocessor.schema_hash:
            raise SchemaError(
                f"model schema {self.model.schema_hash} does not match preprocessing "
                f"schema {self.preprocessor.schema_hash}")
        if not self.model_id:
            self.model_id = f"{self.config.model.get('kind', self.model.kind)}-{self.model.schema_hash[:8]}"

    @property
    def class_names(self):
        return self.config.label_task().class_names

    def scores(self, records) -> np.ndarray:
        return self.model.predict_proba(self.preprocessor.transform(records).values)

    def decisions(self, scores: np.ndarray) -> np.ndarray:
        """Class ids for a score batch (threshold rule for binary, argmax otherwise)."""
        if self.config.task == "binary":
            return (scores[:, 1] >= self.config.threshold).astype(np.int64)
        return np.argmax(scores, axis=1)

    def to_bytes(self) -> bytes:
        cfg = self.config
        extra = {"stage": {"task": cfg.task, "keep": list(cfg.keep), "normalize": cfg.normalize,
                           "threshold": cfg.threshold, "model": cfg.model,
                           "model_id": self.model_id},
                 "schema": self.preprocessor.schema.to_dict()}
        arrays = {}
        if self.preprocessor.normalizer is not None:
            arrays = {"norm_min": self.preprocessor.normalizer.minimum,
                      "norm_max": self.preprocessor.normalizer.maximum}
        return dumps_model(self.model, extra, arrays)

    def save(self, path):
        tmp = f"{path}.tmp"
        with open(tmp, "wb") as fh:
            fh.write(self.to_bytes())
        os.replace(tmp, path)

    @classmethod
    def from_bytes(cls, data: bytes, expected_schema_hash=None) -> "Stage":
        model, extra, arrays = loads_model(data, expected_schema_hash, with_extra=True)
        s = extra["stage"]
        cfg = StageConfig(s["task"], tuple(s["keep"]), s["normalize"], s["threshold"], s["model"])
        norm = None
        if "norm_min" in arrays:
            norm = ds.Normalizer(arrays["norm_min"], arrays["norm_max"])
        pre = Preprocessor(ds.FeatureSchema.from_dict(extra["schema"]), norm)
        return cls(cfg, pre, model, s["model_id"])

    @classmethod
    def load(cls, path, expected_schema_hash=None) -> "Stage":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), expected_schema_hash)


def train_stage(train_records, config: StageConfig, seed=0, cache=None) -> Stage:
    task = config.label_task()
    pre = fit_preprocessor(train_records, config.keep, config.normalize, task)
    data = pre.matrix(train_records, task)
    model = train_model(config.model, data, seed, cache)
    return Stage(config, pre, model)


# --------------------------------------------------------------------------
# verdicts and alerts
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Stage1Result:
    decision: str          # "normal" | "anomaly"
    attack_score: float
    seconds: float


@dataclass(frozen=True)
class Stage2Result:
    category: str
    distribution: tuple
    seconds: float


@dataclass(frozen=True)
class PipelineVerdict:
    record_id: int
    stage1: Stage1Result
    stage2: Stage2Result | None = None

    @property
    def timings(self):
        t = {"stage1": self.stage1.seconds}
        if self.stage2 is not None:
            t["stage2"] = self.stage2.seconds
        return t


@dataclass(frozen=True)
class Alert:
    level: str              # "anomaly" | "categorized"
    record_id: int
    timestamp: float
    models: tuple
    category: str = ""

    def to_message(self) -> proto.WireMessage:
        payload = {"level": self.level, "models": ",".join(self.models),
                   "timestamp": repr(float(self.timestamp))}
        if self.category:
            payload["category"] = self.category
        return proto.WireMessage(proto.ALERT_EVENT, self.record_id, payload)

    @classmethod
    def from_message(cls, m: proto.WireMessage) -> "Alert":
        p = m.payload
        models = tuple(p["models"].split(",")) if p.get("models") else ()
        return cls(p["level"], m.record_id, float(p["timestamp"]), models, p.get("category", ""))


class AlertLog:
    """Append-only alert sink, one ALERT_EVENT line per alert.

    With ``path=None`` alerts are only kept in memory.
    """

    def __init__(self, path=None, keep=True):
        self.path = path
        self.alerts = [] if keep else None
        self._lock = threading.Lock()

    def append(self, alert: Alert):
        line = proto.encode_message(alert.to_message())
        with self._lock:
            if self.path is not None:
                fd = os.open(self.path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
                try:
                    os.write(fd, line)
                finally:
                    os.close(fd)
            if self.alerts is not None:
                self.alerts.append(alert)


def read_alert_log(path) -> list[Alert]:
    with open(path, "rb") as fh:
        return [Alert.from_message(proto.decode_message(line)) for line in fh]


def stage1_detect(stage: Stage, record) -> Stage1Result:
    t0 = time.perf_counter()
    score = float(stage.scores([record])[0, 1])
    dt = time.perf_counter() - t0
    return Stage1Result("anomaly" if score >= stage.config.threshold else "normal", score, dt)


def stage2_classify(stage: Stage, record) -> Stage2Result:
    t0 = time.perf_counter()
    dist = stage.scores([record])[0]
    dt = time.perf_counter() - t0
    cat = stage.class_names[int(np.argmax(dist))]
    return Stage2Result(cat, tuple(float(v) for v in dist), dt)


class PipelineError(FogIDSError):
    def __init__(self, record_id, cause):
        self.record_id = record_id
        self.cause = cause
        super().__init__(f"record {record_id}: {cause}")


class Pipeline:
    """In-process two-stage pipeline; counts stage invocations."""

    def __init__(self, stage1, stage2, alerts: AlertLog | None = None, clock=time.time):
        self.stage1 = stage1
        self.stage2 = stage2
        self.alerts = alerts if alerts is not None else AlertLog()
        self.clock = clock
        self.stats = {"records": 0, "anomaly": 0, "normal": 0, "stage2_calls": 0}

    def _ids(self, stage):
        return (getattr(stage, "model_id", type(stage).__name__),)

    def process(self, record) -> PipelineVerdict:
        rid = -1 if record.line is None else record.line
        try:
            s1 = stage1_detect(self.stage1, record)
        except Exception as exc:
            raise PipelineError(rid, exc) from exc
        self.stats["records"] += 1
        self.stats[s1.decision] += 1
        if s1.decision == "normal":
            return PipelineVerdict(rid, s1)
        self.alerts.append(Alert("anomaly", rid, self.clock(), self._ids(self.stage1)))
        try:
            s2 = stage2_classify(self.stage2, record)
        except Exception as exc:
            raise PipelineError(rid, exc) from exc
        self.stats["stage2_calls"] += 1
        self.alerts.append(Alert("categorized", rid, self.clock(), self._ids(self.stage2), s2.category))
        return PipelineVerdict(rid, s1, s2)

    def run(self, records):
        for r in records:
            yield self.process(r)


def run_pipeline(records, stage1, stage2, alerts: AlertLog | None = None):
    """Generator of verdicts, one per input record, in input order."""
    return Pipeline(stage1, stage2, alerts).run(records)


def verdict_row(v: PipelineVerdict) -> dict:
    """Flat, stable-keyed form used for the verdict log."""
    row = {"record_id": v.record_id, "decision": v.stage1.decision,
           "attack_score": v.stage1.attack_score, "stage1_seconds": v.stage1.seconds}
    if v.stage2 is not None:
        row.update({"category": v.stage2.category, "scores": list(v.stage2.distribution),
                    "stage2_seconds": v.stage2.seconds})
    return row
