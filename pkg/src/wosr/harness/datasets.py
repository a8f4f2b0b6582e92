"""Corpus generation and the on-disk record format.

Record file layout, repeated once per record, all little-endian::

    magic      4s   b"WOSD"
    version    u16  1
    label      u16  WaveformClass value
    rate       f64  sample rate in Hz
    length     u32  number of complex samples
    samples    f32  interleaved I, Q (2 * length values)

A dataset directory holds ``manifest.json`` and one subdirectory per split
with ``records.wosd``, ``meta.jsonl`` and the cached ``features.npy``,
``labels.npy`` and ``snr_db.npy``.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import channel, wavegen
from ..channel import ImpairmentSpec
from ..errors import ContainerError, InvalidParams, VersionError
from ..spectra import featurize_batch
from ..wavegen import IqRecord, ModScheme, WaveformClass, WaveParams, derive_seed
from .manifest import DOMAIN_TEST, DOMAIN_TRAIN, DatasetManifest

RECORD_MAGIC = b"WOSD"
RECORD_VERSION = 1
_HEADER = struct.Struct("<4sHHdI")


# ----------------------------------------------------------------------------
# per-record synthesis


def _draw_params(manifest: DatasetManifest, label: WaveformClass, seed: int,
                 rng: np.random.Generator) -> tuple:
    """Pick class-specific parameters uniformly from the manifest grids."""
    fs = manifest.sample_rate_hz
    bw = float(rng.choice(manifest.bandwidths_hz))
    wave_seed = derive_seed(seed, 0)

    def params(bandwidth=bw, **class_params):
        return WaveParams(fs, bandwidth, manifest.record_len, wave_seed, class_params)

    scheme = ModScheme[str(rng.choice(manifest.mod_schemes))]
    if label == WaveformClass.SC:
        # raise the rolloff where needed to keep two samples per symbol
        rolloff = max(float(rng.choice(manifest.rolloffs)), 2 * bw / fs - 1)
        return wavegen.synth_single_carrier, (params(rolloff=min(rolloff, 1.0)), scheme), {}
    if label in (WaveformClass.OFDM, WaveformClass.SCFDMA):
        scs = float(rng.choice(manifest.subcarrier_spacings_hz))
        p = params(cp_fraction=manifest.cp_fraction)
        return wavegen.synth_multicarrier, (p, label, scs, scheme), {}
    if label == WaveformClass.LFM:
        sweep = str(rng.choice(["up", "down"]))
        p = params(n_pulses=int(rng.choice(manifest.lfm_pulses)))
        return wavegen.synth_lfm, (p, sweep, manifest.duty), {}
    if label == WaveformClass.AM:
        lo, hi = manifest.am_mod_index
        kw = dict(sideband=str(rng.choice(manifest.am_sidebands)), mod_index=float(rng.uniform(lo, hi)))
        return wavegen.synth_analog, (params(), label), kw
    if label == WaveformClass.FM:
        lo, hi = manifest.fm_deviation_ratio
        kw = dict(freq_dev_hz=float(rng.uniform(lo, hi)) * bw)
        return wavegen.synth_analog, (params(), label), kw
    if label == WaveformClass.PHASE_CODED:
        family = str(rng.choice(["barker", "frank", "zadoffchu"]))
        if family == "barker":
            code_param = int(rng.choice(manifest.barker_lengths))
        elif family == "frank":
            code_param = int(rng.choice(manifest.frank_orders))
        else:
            nzc = int(rng.choice(manifest.zc_lengths))
            roots = [u for u in range(1, nzc) if np.gcd(u, nzc) == 1]
            code_param = (int(rng.choice(roots)), nzc)
        return wavegen.synth_phase_coded, (params(), family, code_param), {"duty": manifest.duty}
    if label in (WaveformClass.UNKNOWN_FH, WaveformClass.UNKNOWN_NOISE):
        return wavegen.synth_unknown, (params(), label), {}
    raise InvalidParams(f"no generator for {label!r}")


def draw_impairments(manifest: DatasetManifest, seed: int, snr_db: float | None,
                     rng: np.random.Generator, **overrides) -> ImpairmentSpec:
    imp = manifest.impairments
    spec = dict(
        snr_db=snr_db if imp.awgn else None,
        cfo_hz=float(rng.uniform(-imp.cfo_max_hz, imp.cfo_max_hz)),
        phase_rad=float(rng.uniform(-np.pi, np.pi)) if imp.phase else 0.0,
        iq_imbalance_db=float(rng.uniform(0.0, imp.iq_max_db)),
        fading=str(rng.choice(imp.fading)) if imp.fading else None,
        k_factor=imp.rician_k,
        seed=derive_seed(seed, 1),
    )
    spec.update(overrides)
    return ImpairmentSpec(**spec)


def make_record(manifest: DatasetManifest, label: WaveformClass, seed: int,
                snr_db: float | None, **impairment_overrides) -> IqRecord:
    """Synthesize and impair one record; quantized to complex64 like the stored form."""
    rng = np.random.default_rng(derive_seed(seed, 2))
    fn, args, kwargs = _draw_params(manifest, label, seed, rng)
    rec = fn(*args, **kwargs)
    spec = draw_impairments(manifest, seed, snr_db, rng, **impairment_overrides)
    rec = channel.impair(rec, spec)
    rec.samples = rec.samples.astype(np.complex64)
    rec.meta["record_seed"] = seed
    return rec


# ----------------------------------------------------------------------------
# corpus plans


@dataclass
class Plan:
    """Which records a split contains: label, seed and SNR per record."""

    labels: np.ndarray
    seeds: list
    snr_db: np.ndarray

    def __len__(self):
        return len(self.labels)


def training_plan(manifest: DatasetManifest) -> Plan:
    n = manifest.train_per_class
    labels, seeds, snrs = [], [], []
    lo, hi = manifest.train_snr_db
    for c in wavegen.KNOWN_CLASSES:
        for i in range(n):
            idx = int(c) * n + i
            seed = derive_seed(manifest.master_seed, DOMAIN_TRAIN, idx)
            labels.append(int(c))
            seeds.append(seed)
            snrs.append(np.random.default_rng(derive_seed(seed, 3)).uniform(lo, hi))
    return Plan(np.asarray(labels, dtype=np.int64), seeds, np.asarray(snrs))


def test_plan(manifest: DatasetManifest, domain: int = DOMAIN_TEST,
              classes=None, per_class: int | None = None) -> Plan:
    """Known classes then unknowns; SNR bins assigned round-robin within each class."""
    if classes is None:
        classes = list(wavegen.KNOWN_CLASSES) + list(wavegen.UNKNOWN_CLASSES)
    bins = manifest.test_snr_bins
    labels, seeds, snrs = [], [], []
    idx = 0
    for c in classes:
        c = WaveformClass(c)
        if per_class is not None:
            count = per_class
        else:
            count = manifest.test_per_class if c.known else manifest.test_unknown_per_kind
        for i in range(count):
            labels.append(int(c))
            seeds.append(derive_seed(manifest.master_seed, domain, idx))
            snrs.append(bins[i % len(bins)])
            idx += 1
    return Plan(np.asarray(labels, dtype=np.int64), seeds, np.asarray(snrs, dtype=np.float64))


def synthesize(manifest: DatasetManifest, plan: Plan, **impairment_overrides) -> list:
    return [
        make_record(manifest, WaveformClass(int(lbl)), seed, float(snr), **impairment_overrides)
        for lbl, seed, snr in zip(plan.labels, plan.seeds, plan.snr_db)
    ]


@dataclass
class Split:
    """Features plus ground truth for one split; ``records`` is optional."""

    features: np.ndarray
    labels: np.ndarray
    snr_db: np.ndarray
    records: list | None = None

    def __len__(self):
        return len(self.labels)

    def subset(self, mask) -> "Split":
        mask = np.asarray(mask)
        recs = None
        if self.records is not None:
            idx = np.flatnonzero(mask) if mask.dtype == bool else mask
            recs = [self.records[i] for i in idx]
        return Split(self.features[mask], self.labels[mask], self.snr_db[mask], recs)


def build_split(manifest: DatasetManifest, plan: Plan, keep_records: bool = True,
                **impairment_overrides) -> Split:
    records = synthesize(manifest, plan, **impairment_overrides)
    samples = np.stack([r.samples for r in records]) if records else \
        np.zeros((0, manifest.record_len), dtype=np.complex64)
    if len(records):
        feats = featurize_batch(samples, manifest.n_fft)
    else:
        feats = np.zeros((0, manifest.n_fft), dtype=np.float32)
    return Split(feats, plan.labels.copy(), plan.snr_db.copy(), records if keep_records else None)


def build_training_set(manifest: DatasetManifest, keep_records: bool = True) -> Split:
    return build_split(manifest, training_plan(manifest), keep_records)


def build_test_set(manifest: DatasetManifest, keep_records: bool = True) -> Split:
    return build_split(manifest, test_plan(manifest), keep_records)


# ----------------------------------------------------------------------------
# record files


def write_records(path, records) -> None:
    with open(path, "wb") as fh:
        for rec in records:
            iq = np.asarray(rec.samples, dtype=np.complex64)
            fh.write(_HEADER.pack(RECORD_MAGIC, RECORD_VERSION, int(rec.label),
                                  float(rec.sample_rate_hz), len(iq)))
            fh.write(iq.view("<f4").tobytes())


def read_records(path) -> list:
    data = Path(path).read_bytes()
    out, pos = [], 0
    while pos < len(data):
        if pos + _HEADER.size > len(data):
            raise ContainerError(f"{path}: truncated record header at byte {pos}")
        magic, version, label, rate, n = _HEADER.unpack_from(data, pos)
        if magic != RECORD_MAGIC:
            raise ContainerError(f"{path}: bad record magic at byte {pos}")
        if version != RECORD_VERSION:
            raise VersionError(f"{path}: record version {version}, expected {RECORD_VERSION}")
        pos += _HEADER.size
        end = pos + 8 * n
        if end > len(data):
            raise ContainerError(f"{path}: truncated samples at byte {pos}")
        iq = np.frombuffer(data, dtype="<f4", count=2 * n, offset=pos).astype(np.float32)
        try:
            label = WaveformClass(label)
        except ValueError as exc:
            raise ContainerError(f"{path}: unknown label {label}") from exc
        out.append(IqRecord(iq.view(np.complex64).copy(), rate, label, {}))
        pos = end
    return out


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def save_split(dirpath, split: Split) -> None:
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    np.save(d / "features.npy", np.ascontiguousarray(split.features, dtype="<f4"))
    np.save(d / "labels.npy", split.labels.astype("<i8"))
    np.save(d / "snr_db.npy", split.snr_db.astype("<f8"))
    if split.records is not None:
        write_records(d / "records.wosd", split.records)
        with open(d / "meta.jsonl", "w") as fh:
            for rec in split.records:
                fh.write(json.dumps(rec.meta, sort_keys=True, default=_json_default) + "\n")


def load_split(dirpath, with_records: bool = False) -> Split:
    d = Path(dirpath)
    try:
        feats = np.load(d / "features.npy")
        labels = np.load(d / "labels.npy")
        snrs = np.load(d / "snr_db.npy")
    except (OSError, ValueError) as exc:
        raise ContainerError(f"{d}: cannot read split: {exc}") from exc
    records = read_records(d / "records.wosd") if with_records else None
    return Split(feats, labels, snrs, records)


def save_dataset(dirpath, manifest: DatasetManifest, train: Split | None = None,
                 test: Split | None = None) -> None:
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    (d / "manifest.json").write_text(manifest.to_json() + "\n")
    if train is not None:
        save_split(d / "train", train)
    if test is not None:
        save_split(d / "test", test)


def load_dataset_manifest(dirpath) -> DatasetManifest:
    p = Path(dirpath) / "manifest.json"
    if not p.exists():
        raise ContainerError(f"{dirpath}: no manifest.json")
    return DatasetManifest.from_dict(json.loads(p.read_text()))


def generate_dataset(manifest: DatasetManifest, out_dir) -> tuple:
    train = build_training_set(manifest)
    test = build_test_set(manifest)
    save_dataset(out_dir, manifest, train, test)
    return train, test


def dataset_exists(dirpath) -> bool:
    return os.path.exists(os.path.join(dirpath, "manifest.json"))
