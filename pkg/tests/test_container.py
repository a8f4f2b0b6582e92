import hashlib
import json
import struct

import numpy as np
import pytest

from wosr import densenet, osr
from wosr.densenet import TrainConfig
from wosr.errors import ChecksumError, ContainerError, VersionError
from wosr.harness import container
from wosr.osr import FusionRule, OsrModel

DIM = 16


@pytest.fixture(scope="module")
def model():
    r = np.random.default_rng(0)
    x = (np.eye(DIM)[:7] * 3.0)[np.repeat(np.arange(7), 60)] + r.standard_normal((420, DIM)) * 0.4
    y = np.repeat(np.arange(7), 60)
    clf = densenet.build_mlp(DIM, hidden=(48, 32), dropout=(0.1,), seed=5)
    densenet.train(clf, x.astype(np.float32), y, TrainConfig(epochs=5, batch_size=32, seed=1))
    dets = osr.fit_detectors(clf, x, y, per_class=60, n_trees=10, subsample=32, seed=2)
    return OsrModel(clf, dets, FusionRule.ALL_MUST_ACCEPT)


def test_header_layout(model):
    blob = container.encode(model)
    assert blob[:4] == b"WOSR"
    assert struct.unpack_from("<I", blob, 4)[0] == 1
    head_len = struct.unpack_from("<I", blob, 8)[0]
    assert blob[12:13] == b"{" and blob[12 + head_len - 1:12 + head_len] == b"}"
    assert blob[-32:] == hashlib.sha256(blob[:-32]).digest()


def test_weights_stored_as_little_endian_f32(model):
    blob = container.encode(model)
    head_len = struct.unpack_from("<I", blob, 8)[0]
    header = json.loads(blob[12:12 + head_len])
    entry = next(t for t in header["tensors"] if t["name"] == "classifier/W0")
    assert entry["dtype"] == "f4"
    lo = 12 + head_len + entry["offset"]
    raw = np.frombuffer(blob[lo:lo + entry["nbytes"]], dtype="<f4").reshape(entry["shape"])
    assert np.array_equal(raw, model.classifier.weights[0])


def test_round_trip_bit_identical_outputs(model, tmp_path):
    path = tmp_path / "m.wosr"
    container.persist_models(path, model.classifier, model.detectors, model.fusion_rule)
    back = container.load_models(path)
    assert back.fusion_rule is FusionRule.ALL_MUST_ACCEPT
    assert back.classifier.standardized == model.classifier.standardized
    probes = np.random.default_rng(9).standard_normal((100, DIM)).astype(np.float32)
    a, b = osr.detect(model, probes), osr.detect(back, probes)
    assert a.probs.tobytes() == b.probs.tobytes()
    assert a.scores.tobytes() == b.scores.tobytes()
    assert np.array_equal(a.open_set, b.open_set)
    assert container.encode(back) == path.read_bytes()


def test_encoding_is_deterministic(model):
    assert container.encode(model) == container.encode(model)


@pytest.mark.parametrize("where", [20, -40, -1])
def test_corrupted_byte_raises_checksum(model, tmp_path, where):
    blob = bytearray(container.encode(model))
    blob[where] ^= 0x01
    path = tmp_path / "bad.wosr"
    path.write_bytes(bytes(blob))
    with pytest.raises(ChecksumError):
        container.load_models(path)


def test_version_mismatch(model):
    body = bytearray(container.encode(model)[:-32])
    struct.pack_into("<I", body, 4, 2)
    blob = bytes(body) + hashlib.sha256(bytes(body)).digest()
    with pytest.raises(VersionError):
        container.decode(blob)


def test_bad_magic_and_short_file():
    with pytest.raises(ContainerError):
        container.decode(b"NOPE" + bytes(60))
    with pytest.raises(ContainerError):
        container.decode(b"WOSR")


def test_missing_file(tmp_path):
    with pytest.raises(ContainerError):
        container.load_models(tmp_path / "absent.wosr")


def test_classifier_only_container(model):
    back = container.decode(container.encode(OsrModel(model.classifier)))
    assert back.detectors == {}
    x = np.ones(DIM, dtype=np.float32)
    assert np.array_equal(densenet.predict_proba(back.classifier, x),
                          densenet.predict_proba(model.classifier, x))
