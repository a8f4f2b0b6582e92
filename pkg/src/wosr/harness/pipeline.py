"""End-to-end runs: generate, train, fit detectors, evaluate, export.

``run_pipeline`` is what the acceptance suite and the ``wosr run`` command
call. Everything is seeded from the manifest and the two configs below, so
two runs with equal inputs write byte-identical datasets, models and metrics.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .. import densenet, iforest, osr
from ..densenet import DESK_WIDTHS, TrainConfig
from ..errors import InvalidParams
from ..osr import FusionRule, OsrModel
from . import datasets, evaluate
from .container import persist_models
from .manifest import DOMAIN_EXTRA, DatasetManifest, desk_manifest


@dataclass
class ClassifierConfig:
    hidden: tuple = DESK_WIDTHS
    dropout: tuple = (0.2, 0.2, 0.2)
    init_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierConfig":
        """Flat or nested dict; training keys may sit at the top level."""
        d = dict(d)
        train_keys = {f.name for f in fields(TrainConfig)}
        tr = dict(d.pop("train", {}))
        for k in list(d):
            if k in train_keys:
                tr[k] = d.pop(k)
        unknown = set(d) - {"hidden", "dropout", "init_seed"}
        if unknown:
            raise InvalidParams(f"unknown classifier config keys: {sorted(unknown)}")
        try:
            return cls(
                hidden=tuple(int(w) for w in d.get("hidden", DESK_WIDTHS)),
                dropout=tuple(float(r) for r in d.get("dropout", (0.2, 0.2, 0.2))),
                init_seed=int(d.get("init_seed", 0)),
                train=TrainConfig(**tr),
            )
        except TypeError as exc:
            raise InvalidParams(f"bad training config: {exc}") from exc

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DetectorConfig:
    per_class: int = 500
    contamination: float = 0.02
    n_trees: int = 100
    subsample: int = 256
    seed: int = 0
    min_snr_db: float | None = 0.0  # detectors learn from records at or above this SNR
    fusion_rule: FusionRule = FusionRule.ANY_ACCEPTS

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fusion_rule"] = FusionRule(self.fusion_rule).value
        return d


def train_classifier(split, n_fft: int, cfg: ClassifierConfig | None = None, log=None):
    cfg = cfg or ClassifierConfig()
    model = densenet.build_mlp(n_fft, hidden=cfg.hidden, dropout=cfg.dropout, seed=cfg.init_seed)
    return densenet.train(model, split.features, split.labels, cfg.train, log=log)


def train_detectors(model, split, cfg: DetectorConfig | None = None) -> dict:
    cfg = cfg or DetectorConfig()
    return osr.fit_detectors(model, split.features, split.labels, per_class=cfg.per_class,
                             contamination=cfg.contamination, n_trees=cfg.n_trees,
                             subsample=cfg.subsample, seed=cfg.seed, snr_db=split.snr_db,
                             min_snr_db=cfg.min_snr_db)


def training_flag_rates(model, detectors: dict, split, cfg: DetectorConfig | None = None) -> dict:
    """Fraction of each detector's own training points that it flags as outliers."""
    cfg = cfg or DetectorConfig()
    chosen = osr.select_detector_points(split.labels, cfg.per_class, cfg.seed, split.snr_db,
                                        cfg.min_snr_db)
    out = {}
    for c, idx in chosen.items():
        flags, _ = iforest.is_outlier(detectors[c], densenet.embed(model, split.features[idx]))
        out[evaluate.KNOWN_NAMES[c]] = float(np.mean(flags))
    return out


# impairment settings for the robustness sets; fading and AWGN stay on throughout
CLEAN = {"cfo_hz": 0.0, "phase_rad": 0.0, "iq_imbalance_db": 0.0}
ROBUSTNESS_VARIANTS = {
    "unimpaired": CLEAN,
    "max_phase": dict(CLEAN, phase_rad=float(np.pi)),
    "max_cfo": dict(CLEAN, cfo_hz=5000.0),
    "max_iq": dict(CLEAN, iq_imbalance_db=3.0),
}
AWGN_ONLY = dict(CLEAN, fading=None)


def _extra_plan(manifest: DatasetManifest, min_snr_db: float | None = None):
    bins = manifest.test_snr_bins
    if min_snr_db is not None:
        bins = tuple(b for b in bins if b >= min_snr_db)
    m = manifest.with_(test_snr_bins=bins)
    return m, datasets.test_plan(m, DOMAIN_EXTRA, classes=range(len(evaluate.KNOWN_NAMES)))


def robustness(model, manifest: DatasetManifest, min_snr_db: float = 0.0) -> dict:
    """Closed-set accuracy at or above ``min_snr_db`` per impairment variant.

    Every variant uses the same records (seeds) and differs only in the
    impairment it pins: maximal phase offset, maximal CFO, maximal IQ
    imbalance, or none of the three.
    """
    m, plan = _extra_plan(manifest, min_snr_db)
    out = {}
    for name, overrides in ROBUSTNESS_VARIANTS.items():
        split = datasets.build_split(m, plan, keep_records=False, **overrides)
        out[name] = evaluate.run_phase1(model, split).accuracy()
    return out


def awgn_only_curve(model, manifest: DatasetManifest) -> dict:
    """Closed-set accuracy per SNR bin with AWGN as the only impairment."""
    m, plan = _extra_plan(manifest)
    split = datasets.build_split(m, plan, keep_records=False, **AWGN_ONLY)
    rep = evaluate.run_phase1(model, split)
    return {k: v["overall"] for k, v in rep.accuracy_by_snr.items() if k != evaluate.ALL}


@dataclass
class PipelineResult:
    out_dir: Path
    reports: dict            # phase -> MetricsReport
    training_trace: list
    flag_rates: dict
    robustness: dict
    awgn_curve: dict
    timings: dict            # seconds per stage; never written to metric files
    model: OsrModel


def run_pipeline(out_dir, manifest: DatasetManifest | None = None,
                 clf_cfg: ClassifierConfig | None = None, det_cfg: DetectorConfig | None = None,
                 with_robustness: bool = True, log=None) -> PipelineResult:
    """Generate the corpus, train both stages, evaluate all three phases, export.

    Layout under ``out_dir``: ``data/`` (dataset), ``model.wosr``,
    ``metrics/phase{1,2,3}.{csv,json}`` and ``metrics/summary.json``.
    """
    manifest = manifest or desk_manifest()
    clf_cfg = clf_cfg or ClassifierConfig()
    det_cfg = det_cfg or DetectorConfig()
    out = Path(out_dir)
    (out / "metrics").mkdir(parents=True, exist_ok=True)
    say = log or (lambda msg: None)
    timings = {}

    t = time.perf_counter()
    train, test = datasets.generate_dataset(manifest, out / "data")
    timings["generate"] = time.perf_counter() - t
    say(f"generated {len(train)} training and {len(test)} test records")

    t = time.perf_counter()
    model, trace = train_classifier(train, manifest.n_fft, clf_cfg,
                                    log=lambda row: say(f"epoch {row['epoch']}: {row}"))
    timings["train"] = time.perf_counter() - t

    t = time.perf_counter()
    detectors = train_detectors(model, train, det_cfg)
    timings["detectors"] = time.perf_counter() - t
    persist_models(out / "model.wosr", model, detectors, det_cfg.fusion_rule)
    osr_model = OsrModel(model, detectors, det_cfg.fusion_rule)

    t = time.perf_counter()
    meta = {
        "manifest_digest": manifest.digest(),
        "master_seed": manifest.master_seed,
        "classifier": clf_cfg.to_dict(),
        "detectors": det_cfg.to_dict(),
    }
    reports = {
        1: evaluate.run_phase1(model, test, meta),
        2: evaluate.run_phase2(detectors, model, test, det_cfg.fusion_rule, meta),
        3: evaluate.run_phase3(osr_model, test, meta),
    }
    timings["evaluate"] = time.perf_counter() - t
    for phase, rep in reports.items():
        evaluate.export_metrics(rep, out / "metrics" / f"phase{phase}.csv", "csv")
        evaluate.export_metrics(rep, out / "metrics" / f"phase{phase}.json", "json")

    flags = training_flag_rates(model, detectors, train, det_cfg)
    rob, curve = {}, {}
    if with_robustness:
        t = time.perf_counter()
        rob = robustness(model, manifest)
        curve = awgn_only_curve(model, manifest)
        timings["robustness"] = time.perf_counter() - t
    summary = {
        "training_trace": trace,
        "training_flag_rates": flags,
        "robustness": rob,
        "awgn_only_accuracy": curve,
    }
    (out / "metrics" / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return PipelineResult(out, reports, trace, flags, rob, curve, timings, osr_model)
