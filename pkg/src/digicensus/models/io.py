"""Model snapshots.

Linear models go to a JSON document; tree ensembles to a compact binary:

    8 bytes   magic b"DCTREES\\0"
    uint32    format version
    uint64    header length H
    H bytes   UTF-8 JSON header (estimator, params, init, node counts, fingerprint)
    per tree  feature int32[k], threshold f8[k], left int32[k], right int32[k], value f8[k]

All integers and floats are little-endian.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .ensemble import GradientBoostingRegressor, RandomForestRegressor
from .linear import LassoRegressor, OLSRegressor
from .tree import TreeArrays

LINEAR_FORMAT = "digicensus-linear"
LINEAR_VERSION = 1
TREES_MAGIC = b"DCTREES\x00"
TREES_VERSION = 1

_LINEAR = {"ols": OLSRegressor, "lasso": LassoRegressor}
_ENSEMBLES = {"rf": RandomForestRegressor, "gbt": GradientBoostingRegressor}


class SnapshotError(ValueError):
    pass


def schema_fingerprint(columns) -> str:
    return hashlib.sha256("\x1f".join(map(str, columns)).encode("utf-8")).hexdigest()


def _kind(model) -> str:
    for table in (_LINEAR, _ENSEMBLES):
        for name, cls in table.items():
            if type(model) is cls:
                return name
    raise TypeError(f"cannot snapshot {type(model).__name__}")


def save_model(model, path, columns) -> None:
    kind = _kind(model)
    fingerprint = schema_fingerprint(columns)
    params = model.get_params()
    if kind in _LINEAR:
        doc = {
            "format": LINEAR_FORMAT,
            "version": LINEAR_VERSION,
            "kind": kind,
            "params": params,
            "columns": list(columns),
            "fingerprint": fingerprint,
            "intercept": model.intercept_,
            "coef": model.coef_.tolist(),
            "coef_std": model.coef_std_.tolist(),
            "mean": model.mean_.tolist(),
            "scale": model.scale_.tolist(),
        }
        if kind == "lasso":
            doc["converged"] = bool(model.converged_)
        Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        return

    header = {
        "kind": kind,
        "params": params,
        "columns": list(columns),
        "fingerprint": fingerprint,
        "n_features": int(model.n_features_in_),
        "node_counts": [t.node_count for t in model.trees_],
    }
    if kind == "gbt":
        header["init"] = model.init_
        header["train_loss"] = model.train_loss_
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(TREES_MAGIC + struct.pack("<IQ", TREES_VERSION, len(raw)) + raw)
        for t in model.trees_:
            fh.write(t.feature.astype("<i4").tobytes())
            fh.write(t.threshold.astype("<f8").tobytes())
            fh.write(t.left.astype("<i4").tobytes())
            fh.write(t.right.astype("<i4").tobytes())
            fh.write(t.value.astype("<f8").tobytes())


def load_model(path, columns=None):
    """Restore a snapshot; if ``columns`` is given it must match the stored fingerprint."""
    data = Path(path).read_bytes()
    if data.startswith(TREES_MAGIC):
        version, hlen = struct.unpack("<IQ", data[8:20])
        if version != TREES_VERSION:
            raise SnapshotError(f"unsupported ensemble snapshot version {version}")
        header = json.loads(data[20:20 + hlen].decode("utf-8"))
        _check_fingerprint(header, columns)
        model = _ENSEMBLES[header["kind"]](**header["params"])
        off = 20 + hlen
        trees = []
        for k in header["node_counts"]:
            arrays = []
            for dt in ("<i4", "<f8", "<i4", "<i4", "<f8"):
                width = np.dtype(dt).itemsize * k
                arrays.append(np.frombuffer(data[off:off + width], dtype=dt))
                off += width
            trees.append(TreeArrays(*arrays, n_samples=np.zeros(k, dtype=np.int64)))
        model.trees_ = trees
        model.n_features_in_ = header["n_features"]
        if header["kind"] == "gbt":
            model.init_ = header["init"]
            model.train_loss_ = header["train_loss"]
        return model

    doc = json.loads(data.decode("utf-8"))
    if doc.get("format") != LINEAR_FORMAT:
        raise SnapshotError(f"{path}: not a model snapshot")
    if doc.get("version") != LINEAR_VERSION:
        raise SnapshotError(f"unsupported linear snapshot version {doc.get('version')}")
    _check_fingerprint(doc, columns)
    model = _LINEAR[doc["kind"]](**doc["params"])
    model.coef_ = np.array(doc["coef"], dtype=float)
    model.coef_std_ = np.array(doc["coef_std"], dtype=float)
    model.mean_ = np.array(doc["mean"], dtype=float)
    model.scale_ = np.array(doc["scale"], dtype=float)
    model.intercept_ = float(doc["intercept"])
    model.n_features_in_ = len(model.coef_)
    if doc["kind"] == "lasso":
        model.converged_ = doc["converged"]
    return model


def _check_fingerprint(doc, columns):
    if columns is not None and schema_fingerprint(columns) != doc["fingerprint"]:
        stored = doc.get("columns", [])
        extra = sorted(set(columns) - set(stored))
        missing = sorted(set(stored) - set(columns))
        raise SnapshotError(f"schema mismatch: unexpected columns {extra[:5]}, missing columns {missing[:5]}")
