"""NSL-KDD parsing, encoding, feature selection, scaling and label tasks."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from collections import Counter
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, SchemaError, UnmappedLabelError

FEATURE_NAMES = (
    "duration", "protocol_type", "service", "flag", "src_bytes", "dst_bytes",
    "land", "wrong_fragment", "urgent", "hot", "num_failed_logins", "logged_in",
    "num_compromised", "root_shell", "su_attempted", "num_root",
    "num_file_creations", "num_shells", "num_access_files", "num_outbound_cmds",
    "is_host_login", "is_guest_login", "count", "srv_count", "serror_rate",
    "srv_serror_rate", "rerror_rate", "srv_rerror_rate", "same_srv_rate",
    "diff_srv_rate", "srv_diff_host_rate", "dst_host_count",
    "dst_host_srv_count", "dst_host_same_srv_rate", "dst_host_diff_srv_rate",
    "dst_host_same_src_port_rate", "dst_host_srv_diff_host_rate",
    "dst_host_serror_rate", "dst_host_srv_serror_rate", "dst_host_rerror_rate",
    "dst_host_srv_rerror_rate",
)
CATEGORICAL = frozenset({"protocol_type", "service", "flag"})
N_FEATURES = len(FEATURE_NAMES)

# Constant or near-constant in KDDTrain+; dropping them leaves 38 features.
DEFAULT_DROP = ("num_outbound_cmds", "is_host_login", "urgent")
DEFAULT_KEEP = tuple(n for n in FEATURE_NAMES if n not in DEFAULT_DROP)

CATEGORIES = ("DoS", "Probe", "R2L", "U2R")

# Per-class record counts of the three NSL-KDD files as published alongside
# the dataset. The KDDTest-21 R2L/U2R cells are known to be wrong; see
# reconcile_counts().
REFERENCE_COUNTS = {
    "KDDTrain+": {"normal": 67343, "DoS": 45927, "Probe": 11656, "R2L": 995, "U2R": 52, "total": 125973},
    "KDDTest+": {"normal": 9711, "DoS": 7458, "Probe": 2421, "R2L": 2754, "U2R": 200, "total": 22544},
    "KDDTest-21": {"normal": 2152, "DoS": 4342, "Probe": 2402, "R2L": 533, "U2R": 2421, "total": 11850},
}

FILE_NAMES = {
    "KDDTrain+": "KDDTrain+.txt",
    "KDDTest+": "KDDTest+.txt",
    "KDDTest-21": "KDDTest-21.txt",
}


# --------------------------------------------------------------------------
# schema and records
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureSchema:
    """The 41 KDD features, the categorical vocabularies and the kept subset.

    Vocabularies are empty until :meth:`fit` is called on a training split.
    """

    vocab: dict = field(default_factory=dict)
    keep: tuple = DEFAULT_KEEP

    def __post_init__(self):
        unknown = [n for n in self.keep if n not in FEATURE_NAMES]
        if unknown:
            raise SchemaError(f"unknown feature name(s): {', '.join(unknown)}")
        # canonical order regardless of how keep was given
        order = tuple(n for n in FEATURE_NAMES if n in set(self.keep))
        object.__setattr__(self, "keep", order)

    @property
    def features(self):
        return [(n, "categorical" if n in CATEGORICAL else "continuous") for n in FEATURE_NAMES]

    @property
    def fitted(self):
        return all(n in self.vocab for n in CATEGORICAL)

    def fit(self, records: Iterable["ConnectionRecord"]) -> "FeatureSchema":
        seen = {n: set() for n in CATEGORICAL}
        idx = {n: FEATURE_NAMES.index(n) for n in CATEGORICAL}
        for r in records:
            for n, i in idx.items():
                seen[n].add(r.features[i])
        return replace(self, vocab={n: tuple(sorted(v)) for n, v in seen.items()})

    def columns(self) -> list[str]:
        if not self.fitted:
            raise SchemaError("schema vocabularies are not fitted")
        cols = []
        for n in self.keep:
            if n in CATEGORICAL:
                cols.extend(f"{n}={v}" for v in self.vocab[n])
            else:
                cols.append(n)
        return cols

    def unknown_values(self, records) -> dict[str, list[str]]:
        """Categorical values present in ``records`` but absent from the vocabulary."""
        out = {}
        for n in CATEGORICAL:
            i = FEATURE_NAMES.index(n)
            known = set(self.vocab.get(n, ()))
            missing = {r.features[i] for r in records} - known
            if missing:
                out[n] = sorted(missing)
        return out

    def to_dict(self):
        return {"vocab": {k: list(v) for k, v in sorted(self.vocab.items())}, "keep": list(self.keep)}

    @classmethod
    def from_dict(cls, d):
        return cls(vocab={k: tuple(v) for k, v in d["vocab"].items()}, keep=tuple(d["keep"]))


@dataclass(frozen=True)
class ConnectionRecord:
    features: tuple
    label: str
    difficulty: int | None = None
    line: int | None = None

    def value(self, name):
        return self.features[FEATURE_NAMES.index(name)]

    def fields(self) -> list[str]:
        """Raw text fields as they would appear in an NSL-KDD file."""
        out = [v if isinstance(v, str) else format_number(v) for v in self.features]
        out.append(self.label)
        if self.difficulty is not None:
            out.append(str(self.difficulty))
        return out


def format_number(v: float) -> str:
    if float(v).is_integer() and abs(v) < 2**53:
        return str(int(v))
    return repr(float(v))


def record_from_fields(parts: Sequence[str], lineno: int | None = None) -> ConnectionRecord:
    """Validate and convert 42 or 43 raw text fields; raises ValueError."""
    if len(parts) not in (N_FEATURES + 1, N_FEATURES + 2):
        raise ValueError(f"expected 42 or 43 fields, got {len(parts)}")
    feats = []
    for name, raw in zip(FEATURE_NAMES, parts):
        raw = raw.strip()
        if name in CATEGORICAL:
            if not raw:
                raise ValueError(f"empty categorical field {name}")
            feats.append(raw)
            continue
        try:
            v = float(raw)
        except ValueError:
            raise ValueError(f"non-numeric value {raw!r} for {name}") from None
        if not math.isfinite(v) or v < 0:
            raise ValueError(f"value {raw!r} for {name} is not a finite non-negative number")
        feats.append(v)
    label = parts[N_FEATURES].strip().rstrip(".").lower()
    if not label:
        raise ValueError("empty label")
    difficulty = None
    if len(parts) == N_FEATURES + 2:
        raw = parts[-1].strip()
        try:
            difficulty = int(raw)
        except ValueError:
            raise ValueError(f"non-integer difficulty {raw!r}") from None
        if not 0 <= difficulty <= 21:
            raise ValueError(f"difficulty {difficulty} outside 0..21")
    return ConnectionRecord(tuple(feats), label, difficulty, lineno)


def parse_records(source) -> list[ConnectionRecord]:
    """Parse NSL-KDD comma-separated text.

    ``source`` may be bytes, a path, or a binary/text file object. Every
    malformed line is collected and reported together in one ParseError.
    """
    if isinstance(source, (bytes, bytearray)):
        text = bytes(source).decode("ascii", errors="replace")
    elif isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            text = fh.read().decode("ascii", errors="replace")
    else:
        data = source.read()
        text = data.decode("ascii", errors="replace") if isinstance(data, bytes) else data

    records, errors = [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        try:
            records.append(record_from_fields(line.split(","), lineno))
        except ValueError as exc:
            errors.append((lineno, str(exc)))
    if errors:
        raise ParseError(errors)
    return records


def read_dataset(data_dir, name: str) -> list[ConnectionRecord]:
    return parse_records(os.path.join(data_dir, FILE_NAMES[name]))


# --------------------------------------------------------------------------
# matrices
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    columns: tuple
    labels: np.ndarray | None = None
    class_names: tuple = ()
    preprocessing: str = ""
    record_ids: np.ndarray | None = None

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.columns):
            raise SchemaError(
                f"values shape {self.values.shape} does not match {len(self.columns)} columns")
        if self.labels is not None:
            if len(self.labels) != len(self.values):
                raise SchemaError("labels and values are not aligned")
            if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
                raise SchemaError("label id outside class range")

    @property
    def n_rows(self):
        return self.values.shape[0]

    @property
    def n_cols(self):
        return self.values.shape[1]

    @property
    def n_classes(self):
        return len(self.class_names)

    @property
    def schema_hash(self) -> str:
        return schema_hash(self.columns, self.preprocessing)

    def take(self, rows) -> "FeatureMatrix":
        return replace(
            self,
            values=self.values[rows],
            labels=None if self.labels is None else self.labels[rows],
            record_ids=None if self.record_ids is None else self.record_ids[rows],
        )

    def to_csv(self, path_or_buf):
        """CSV export for inspection: record id, encoded columns, label name."""
        own = isinstance(path_or_buf, (str, os.PathLike))
        fh = open(path_or_buf, "w", newline="") if own else path_or_buf
        try:
            w = csv.writer(fh)
            w.writerow(["record_id", *self.columns, "label"])
            for i in range(self.n_rows):
                rid = "" if self.record_ids is None else int(self.record_ids[i])
                lab = "" if self.labels is None else self.class_names[self.labels[i]]
                w.writerow([rid, *(repr(float(v)) for v in self.values[i]), lab])
        finally:
            if own:
                fh.close()


def schema_hash(columns, preprocessing="") -> str:
    blob = json.dumps({"columns": list(columns), "preprocessing": preprocessing}, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def encode(records: Sequence[ConnectionRecord], schema: FeatureSchema) -> FeatureMatrix:
    """One-hot encode categoricals over the fitted vocabulary; copy continuous values.

    Unseen categorical values produce an all-zero indicator block.
    """
    columns = schema.columns()
    n = len(records)
    out = np.zeros((n, len(columns)), dtype=np.float64)
    rows = [r.features for r in records]
    for r in rows:
        if len(r) != N_FEATURES:
            raise SchemaError(f"record has {len(r)} features, expected {N_FEATURES}")
    col = 0
    for name in schema.keep:
        i = FEATURE_NAMES.index(name)
        if name in CATEGORICAL:
            vocab = schema.vocab[name]
            lookup = {v: j for j, v in enumerate(vocab)}
            if n:
                idx = np.fromiter((lookup.get(r[i], -1) for r in rows), dtype=np.int64, count=n)
                hit = idx >= 0
                out[np.nonzero(hit)[0], col + idx[hit]] = 1.0
            col += len(vocab)
        else:
            if n:
                out[:, col] = np.fromiter((r[i] for r in rows), dtype=np.float64, count=n)
            col += 1
    ids = np.fromiter((-1 if r.line is None else r.line for r in records), dtype=np.int64, count=n)
    return FeatureMatrix(out, tuple(columns), record_ids=ids)


def _raw_name(column: str) -> str:
    return column.split("=", 1)[0]


def select_features(obj, keep_list):
    """Restrict a schema or an encoded matrix to ``keep_list`` (raw feature names).

    Original feature order is preserved whatever order ``keep_list`` has.
    """
    unknown = [n for n in keep_list if n not in FEATURE_NAMES]
    if unknown:
        raise SchemaError(f"unknown feature name(s): {', '.join(unknown)}")
    keep = set(keep_list)
    if isinstance(obj, FeatureSchema):
        return replace(obj, keep=tuple(n for n in obj.keep if n in keep))
    if isinstance(obj, FeatureMatrix):
        idx = [j for j, c in enumerate(obj.columns) if _raw_name(c) in keep]
        return replace(obj, values=obj.values[:, idx], columns=tuple(obj.columns[j] for j in idx))
    raise TypeError(f"cannot select features from {type(obj).__name__}")


# --------------------------------------------------------------------------
# min-max scaling
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Normalizer:
    minimum: np.ndarray
    maximum: np.ndarray

    @property
    def fingerprint(self) -> str:
        h = hashlib.sha256(self.minimum.tobytes() + self.maximum.tobytes()).hexdigest()[:16]
        return f"minmax:{h}"

    def transform(self, values: np.ndarray) -> np.ndarray:
        if values.shape[-1] != len(self.minimum):
            raise SchemaError(
                f"normalizer has {len(self.minimum)} columns, matrix has {values.shape[-1]}")
        span = self.maximum - self.minimum
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (values - self.minimum) / safe, 0.0)


def fit_normalizer(train: FeatureMatrix) -> Normalizer:
    if train.n_rows == 0:
        raise SchemaError("cannot fit a normalizer on an empty matrix")
    return Normalizer(train.values.min(axis=0), train.values.max(axis=0))


def apply_normalizer(norm: Normalizer, m: FeatureMatrix) -> FeatureMatrix:
    return replace(m, values=norm.transform(m.values), preprocessing=norm.fingerprint)


# --------------------------------------------------------------------------
# labels
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LabelTask:
    name: str
    class_names: tuple
    mapping: dict

    def category_of(self, label: str) -> str:
        if label == "normal":
            return "normal"
        try:
            return self.mapping[label]
        except KeyError:
            raise UnmappedLabelError([label]) from None


def load_category_map(path=None) -> dict[str, str]:
    if path is None:
        text = resources.files("fogids").joinpath("data/attack_categories.csv").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    mapping = {}
    for row in csv.DictReader(io.StringIO(text)):
        name, cat = row["name"].strip().lower(), row["category"].strip()
        if cat not in CATEGORIES:
            raise SchemaError(f"attack {name!r} mapped to unknown category {cat!r}")
        if name in mapping:
            raise SchemaError(f"attack {name!r} listed twice in category map")
        if name == "normal":
            raise SchemaError("'normal' must not appear in the attack category map")
        mapping[name] = cat
    return mapping


def binary_task(mapping=None) -> LabelTask:
    return LabelTask("binary", ("normal", "attack"), mapping or load_category_map())


def category_task(mapping=None) -> LabelTask:
    return LabelTask("category", CATEGORIES, mapping or load_category_map())


def map_labels(records: Sequence[ConnectionRecord], task: LabelTask):
    """Return ``(row_indices, label_ids)``.

    Binary keeps every row; Category drops normal rows. Any attack name
    missing from the mapping aborts with UnmappedLabelError.
    """
    missing = {r.label for r in records if r.label != "normal" and r.label not in task.mapping}
    if missing:
        raise UnmappedLabelError(missing)
    if task.name == "binary":
        ids = np.fromiter((0 if r.label == "normal" else 1 for r in records), dtype=np.int64,
                          count=len(records))
        return np.arange(len(records)), ids
    index = {c: i for i, c in enumerate(task.class_names)}
    rows, ids = [], []
    for i, r in enumerate(records):
        if r.label != "normal":
            rows.append(i)
            ids.append(index[task.mapping[r.label]])
    return np.asarray(rows, dtype=np.int64), np.asarray(ids, dtype=np.int64)


def labelled_matrix(records, schema: FeatureSchema, task: LabelTask) -> FeatureMatrix:
    rows, ids = map_labels(records, task)
    m = encode([records[i] for i in rows], schema)
    return replace(m, labels=ids, class_names=task.class_names)


def class_counts(records, mapping=None) -> dict[str, int]:
    mapping = mapping or load_category_map()
    task = category_task(mapping)
    c = Counter(task.category_of(r.label) for r in records)
    out = {k: c.get(k, 0) for k in ("normal", *CATEGORIES)}
    out["total"] = len(records)
    return out


def reconcile_counts(name: str, counts: dict) -> list[str]:
    """Differences between observed counts and the reference counts.

    For KDDTest-21 the published R2L/U2R cells cannot be right (U2R there
    exceeds the 200 U2R records of KDDTest+, of which it is a subset), so
    only their sum is compared and U2R is bounded by the KDDTest+ count.
    """
    ref = REFERENCE_COUNTS[name]
    problems = []
    keys = ["normal", "DoS", "Probe", "R2L", "U2R", "total"]
    if name == "KDDTest-21":
        keys = ["normal", "DoS", "Probe", "total"]
        if counts["R2L"] + counts["U2R"] != ref["R2L"] + ref["U2R"]:
            problems.append(f"R2L+U2R: observed {counts['R2L'] + counts['U2R']}, "
                            f"reference {ref['R2L'] + ref['U2R']}")
        if counts["U2R"] > REFERENCE_COUNTS["KDDTest+"]["U2R"]:
            problems.append(f"U2R {counts['U2R']} exceeds the KDDTest+ U2R count")
    for k in keys:
        if counts[k] != ref[k]:
            problems.append(f"{k}: observed {counts[k]}, table {ref[k]}")
    return problems


def feature_spread(records) -> dict[str, tuple[float, int]]:
    """Variance and number of non-zero entries per continuous feature."""
    out = {}
    for i, name in enumerate(FEATURE_NAMES):
        if name in CATEGORICAL:
            continue
        col = np.fromiter((r.features[i] for r in records), dtype=np.float64, count=len(records))
        out[name] = (float(col.var()) if len(col) else 0.0, int(np.count_nonzero(col)))
    return out
