"""Versioned, deterministic model archives.

An archive is a zip file holding ``header.json`` plus one ``.npy`` entry per
array. Entry timestamps are pinned and JSON is written with sorted keys, so
a model trained with a fixed seed always serialises to the same bytes.
"""

from __future__ import annotations

import io
import json
import zipfile

import numpy as np

from .ensemble import EnsembleModel
from .errors import SchemaError
from .learners.knn import KnnModel
from .learners.mlp import MlpModel
from .learners.tree import TreeModel

FORMAT = "fogids-model"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)

_LEAVES = {"tree": TreeModel, "knn": KnnModel, "mlp": MlpModel}


def _describe(model, prefix, arrays):
    if isinstance(model, EnsembleModel):
        meta, _ = model.get_state()
        members = [_describe(m, f"{prefix}m{i}/", arrays) for i, m in enumerate(model.members)]
        return {"type": "ensemble", "meta": meta, "members": members}
    meta, arrs = model.get_state()
    names = {}
    for name, a in arrs.items():
        key = f"{prefix}{name}.npy"
        arrays[key] = np.ascontiguousarray(a)
        names[name] = key
    return {"type": model.kind, "meta": meta, "arrays": names}


def _rebuild(node, arrays):
    if node["type"] == "ensemble":
        meta = node["meta"]
        members = [_rebuild(m, arrays) for m in node["members"]]
        w = meta["weights"]
        return EnsembleModel(meta["kind"], members, meta["rule"],
                             None if w is None else np.asarray(w, dtype=np.float64),
                             meta["seed"], meta["config"])
    cls = _LEAVES.get(node["type"])
    if cls is None:
        raise SchemaError(f"unknown model type {node['type']!r} in archive")
    return cls.from_state(node["meta"], {k: arrays[v] for k, v in node["arrays"].items()})


def _npy_bytes(a):
    buf = io.BytesIO()
    np.lib.format.write_array(buf, a, allow_pickle=False)
    return buf.getvalue()


def write_archive(header: dict, arrays: dict) -> bytes:
    out = io.BytesIO()
    with zipfile.ZipFile(out, "w") as zf:
        entries = [("header.json", json.dumps(header, sort_keys=True, indent=1).encode())]
        entries += [(k, _npy_bytes(arrays[k])) for k in sorted(arrays)]
        for name, data in entries:
            info = zipfile.ZipInfo(name, date_time=_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, data)
    return out.getvalue()


def read_archive(data: bytes):
    try:
        zf = zipfile.ZipFile(io.BytesIO(data))
        header = json.loads(zf.read("header.json"))
    except (zipfile.BadZipFile, KeyError, ValueError) as exc:
        raise SchemaError(f"not a model archive ({exc})") from None
    with zf:
        if header.get("format") != FORMAT:
            raise SchemaError("not a model archive")
        if header.get("version") != VERSION:
            raise SchemaError(f"unsupported archive version {header.get('version')}")
        arrays = {n: np.lib.format.read_array(io.BytesIO(zf.read(n)), allow_pickle=False)
                  for n in zf.namelist() if n.endswith(".npy")}
    return header, arrays


def dumps_model(model, extra: dict | None = None, extra_arrays: dict | None = None) -> bytes:
    arrays = {}
    root = _describe(model, "model/", arrays)
    for k, v in (extra_arrays or {}).items():
        arrays[f"extra/{k}.npy"] = np.ascontiguousarray(v)
    header = {"format": FORMAT, "version": VERSION, "schema_hash": model.schema_hash,
              "model": root, "extra": extra or {}}
    return write_archive(header, arrays)


def loads_model(data: bytes, expected_schema_hash: str | None = None, with_extra=False):
    header, arrays = read_archive(data)
    if expected_schema_hash is not None and header["schema_hash"] != expected_schema_hash:
        raise SchemaError(f"model schema hash {header['schema_hash']} does not match "
                          f"expected {expected_schema_hash}")
    model = _rebuild(header["model"], arrays)
    if model.schema_hash != header["schema_hash"]:
        raise SchemaError("archive header and model disagree on schema hash")
    if not with_extra:
        return model
    extra_arrays = {k[len("extra/"):-len(".npy")]: v for k, v in arrays.items() if k.startswith("extra/")}
    return model, header["extra"], extra_arrays


def save_model(model, path, **kw):
    with open(path, "wb") as fh:
        fh.write(dumps_model(model, **kw))


def load_model(path, expected_schema_hash=None, with_extra=False):
    with open(path, "rb") as fh:
        return loads_model(fh.read(), expected_schema_hash, with_extra)
