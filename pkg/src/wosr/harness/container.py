"""Versioned binary container for a classifier and its detectors.

Layout (little-endian)::

    b"WOSR"            magic
    u32                format version (1)
    u32                header length in bytes
    header             UTF-8 JSON: layer specs, detector settings, tensor table
    tensor data        raw arrays back to back: float tensors as <f4, integer tensors as <i4
    32 bytes           SHA-256 of everything above

The checksum is verified before anything is decoded, so a corrupted file is
never partially loaded.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from ..densenet import LayerSpec, MlpModel
from ..errors import ChecksumError, ContainerError, VersionError
from ..iforest import IsolationForestModel, IsolationTree
from ..osr import FusionRule, OsrModel
from ..wavegen import WaveformClass

MAGIC = b"WOSR"
VERSION = 1
_PREFIX = struct.Struct("<4sII")
_DIGEST_LEN = 32
_DTYPES = {"f4": np.dtype("<f4"), "i4": np.dtype("<i4")}


class _Writer:
    def __init__(self):
        self.table = []
        self.chunks = []
        self.offset = 0

    def add(self, name: str, arr, kind: str):
        data = np.ascontiguousarray(arr, dtype=_DTYPES[kind]).tobytes()
        self.table.append({"name": name, "dtype": kind, "shape": list(np.shape(arr)),
                           "offset": self.offset, "nbytes": len(data)})
        self.chunks.append(data)
        self.offset += len(data)


def encode(model: OsrModel) -> bytes:
    w = _Writer()
    clf = model.classifier
    for i, (wt, b) in enumerate(zip(clf.weights, clf.biases)):
        w.add(f"classifier/W{i}", wt, "f4")
        w.add(f"classifier/b{i}", b, "f4")
    if clf.standardized:
        w.add("classifier/input_mean", clf.input_mean, "f4")
        w.add("classifier/input_scale", clf.input_scale, "f4")
    header = {
        "classifier": {
            "input_dim": clf.input_dim,
            "embedding_tap": clf.embedding_tap,
            "input_gain": clf.input_gain,
            "trained": clf.trained,
            "standardized": clf.standardized,
            "layers": [
                {"width": s.width, "activation": s.activation.value, "dropout_rate": s.dropout_rate}
                for s in clf.layers
            ],
        },
        "fusion_rule": model.fusion_rule.value,
        "detectors": [],
    }
    for cls_idx in sorted(model.detectors):
        det = model.detectors[cls_idx]
        name = WaveformClass(cls_idx).name
        header["detectors"].append({
            "class": name,
            "subsample": det.subsample,
            "contamination": det.contamination,
            "score_threshold": det.score_threshold,
            "n_features": det.n_features,
            "n_trees": det.n_trees,
        })
        trees = det.trees
        w.add(f"detectors/{name}/node_counts", [t.n_nodes for t in trees], "i4")
        for field_name, kind in (("split_dim", "i4"), ("split_value", "f4"), ("left", "i4"),
                                 ("right", "i4"), ("size", "i4")):
            w.add(f"detectors/{name}/{field_name}",
                  np.concatenate([getattr(t, field_name) for t in trees]), kind)
    header["tensors"] = w.table
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = _PREFIX.pack(MAGIC, VERSION, len(head)) + head + b"".join(w.chunks)
    return body + hashlib.sha256(body).digest()


def decode(blob: bytes) -> OsrModel:
    if len(blob) < _PREFIX.size + _DIGEST_LEN:
        raise ContainerError("file too short to be a model container")
    magic, version, head_len = _PREFIX.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r}")
    body, digest = blob[:-_DIGEST_LEN], blob[-_DIGEST_LEN:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("model container checksum mismatch")
    if version != VERSION:
        raise VersionError(f"container version {version}, this build reads {VERSION}")
    start = _PREFIX.size
    try:
        header = json.loads(body[start:start + head_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"unreadable header: {exc}") from exc
    data_start = start + head_len
    tensors = {}
    for entry in header["tensors"]:
        dt = _DTYPES[entry["dtype"]]
        lo = data_start + entry["offset"]
        arr = np.frombuffer(body, dtype=dt, count=entry["nbytes"] // dt.itemsize, offset=lo)
        tensors[entry["name"]] = arr.astype(dt.newbyteorder("="), copy=True).reshape(entry["shape"])

    ch = header["classifier"]
    layers = [LayerSpec(d["width"], d["activation"], d["dropout_rate"]) for d in ch["layers"]]
    weights = [tensors[f"classifier/W{i}"] for i in range(len(layers))]
    biases = [tensors[f"classifier/b{i}"] for i in range(len(layers))]
    std = ch.get("standardized", False)
    clf = MlpModel(layers, weights, biases, ch["input_dim"], ch["embedding_tap"],
                   ch["input_gain"], ch["trained"],
                   tensors["classifier/input_mean"] if std else None,
                   tensors["classifier/input_scale"] if std else None)

    detectors = {}
    for d in header["detectors"]:
        name = d["class"]
        counts = tensors[f"detectors/{name}/node_counts"]
        bounds = np.concatenate([[0], np.cumsum(counts)])
        cols = {f: tensors[f"detectors/{name}/{f}"]
                for f in ("split_dim", "split_value", "left", "right", "size")}
        trees = [
            IsolationTree(*(cols[f][bounds[i]:bounds[i + 1]].copy()
                            for f in ("split_dim", "split_value", "left", "right", "size")))
            for i in range(len(counts))
        ]
        cls_idx = int(WaveformClass[name])
        detectors[cls_idx] = IsolationForestModel(
            trees, d["subsample"], d["contamination"], d["score_threshold"], d["n_features"], cls_idx
        )
    return OsrModel(clf, detectors, FusionRule(header["fusion_rule"]))


def persist_models(path, classifier: MlpModel, detectors: dict | None = None,
                   fusion_rule: FusionRule = FusionRule.ANY_ACCEPTS) -> None:
    blob = encode(OsrModel(classifier, dict(detectors or {}), fusion_rule))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def load_models(path) -> OsrModel:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise ContainerError(f"cannot read {path}: {exc}") from exc
    return decode(blob)
