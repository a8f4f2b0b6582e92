"""Command-line interface.

Exit codes: 0 success, 2 invalid configuration, 3 data error, 4 model error.
``WOSR_THREADS`` caps the BLAS thread pools (read when the package is imported).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .. import densenet, osr, spectra
from ..errors import ContainerError, InvalidInput, InvalidParams, InvalidState, WosrError
from ..iforest import c_factor
from ..osr import FusionRule, OsrModel
from ..wavegen import IqRecord, WaveformClass
from . import datasets, evaluate
from .container import load_models, persist_models
from .manifest import load_manifest
from .pipeline import ClassifierConfig, DetectorConfig, run_pipeline, train_classifier, train_detectors

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_MODEL = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


def _guard(code: int, fn, *args, **kwargs):
    """Run ``fn`` and turn library errors into a ``CliError`` with ``code``."""
    try:
        return fn(*args, **kwargs)
    except (WosrError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(code, f"{type(exc).__name__}: {exc}") from exc


def _read_json(path, code=EXIT_CONFIG) -> dict:
    def load():
        return json.loads(Path(path).read_text())
    return _guard(code, load)


def _load_model(path) -> OsrModel:
    return _guard(EXIT_MODEL, load_models, path)


def _load_split(data_dir, name: str):
    return _guard(EXIT_DATA, datasets.load_split, Path(data_dir) / name)


def cmd_gen_data(args):
    manifest = _guard(EXIT_CONFIG, load_manifest, args.manifest)
    train, test = _guard(EXIT_DATA, datasets.generate_dataset, manifest, args.out)
    print(json.dumps({"train": len(train), "test": len(test), "out": str(args.out),
                      "manifest_digest": manifest.digest()}))


def cmd_train(args):
    cfg = ClassifierConfig()
    if args.config:
        cfg = _guard(EXIT_CONFIG, ClassifierConfig.from_dict, _read_json(args.config))
    manifest = _guard(EXIT_DATA, datasets.load_dataset_manifest, args.data)
    split = _load_split(args.data, "train")
    log = (lambda row: print(json.dumps(row), file=sys.stderr)) if args.verbose else None
    model, _ = _guard(EXIT_DATA, train_classifier, split, manifest.n_fft, cfg, log)
    _guard(EXIT_MODEL, persist_models, args.out, model)
    print(json.dumps({"model": str(args.out), "epochs": cfg.train.epochs}))


def cmd_train_detectors(args):
    m = _load_model(args.model)
    if not m.classifier.trained:
        raise CliError(EXIT_MODEL, "model has no trained classifier")
    try:
        det_cfg = DetectorConfig(per_class=args.per_class, contamination=args.contamination,
                                 n_trees=args.n_trees, seed=args.seed, min_snr_db=args.min_snr_db,
                                 fusion_rule=FusionRule(args.fusion))
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    if not 0 < det_cfg.contamination < 0.5:
        raise CliError(EXIT_CONFIG, "contamination must lie in (0, 0.5)")
    split = _load_split(args.data, "train")
    detectors = _guard(EXIT_DATA, train_detectors, m.classifier, split, det_cfg)
    _guard(EXIT_MODEL, persist_models, args.model, m.classifier, detectors, det_cfg.fusion_rule)
    print(json.dumps({"model": str(args.model), "detectors": len(detectors)}))


def cmd_eval(args):
    m = _load_model(args.model)
    split = _load_split(args.data, "test")
    if args.phase == 1:
        rep = _guard(EXIT_MODEL, evaluate.run_phase1, m.classifier, split)
    elif args.phase == 2:
        rep = _guard(EXIT_MODEL, evaluate.run_phase2, m.detectors, m.classifier, split, m.fusion_rule)
    else:
        rep = _guard(EXIT_MODEL, evaluate.run_phase3, m, split)
    fmt = "json" if str(args.report).endswith(".json") else "csv"
    _guard(EXIT_DATA, evaluate.export_metrics, rep, args.report, fmt)
    print(json.dumps({"phase": args.phase, "report": str(args.report),
                      "overall_accuracy": rep.accuracy(),
                      "known_accept_rate": rep.known_accept_rate,
                      "unknown_reject_rate": rep.unknown_reject_rate}))


def _read_iq(path, sample_rate_hz: float) -> list:
    data = Path(path).read_bytes()
    if data[:4] == datasets.RECORD_MAGIC:
        return datasets.read_records(path)
    if len(data) == 0 or len(data) % 8:
        raise InvalidInput(f"{path}: raw I/Q must be a non-empty run of little-endian float32 pairs")
    iq = np.frombuffer(data, dtype="<f4").astype(np.float32).view(np.complex64)
    return [IqRecord(iq, sample_rate_hz, WaveformClass.UNKNOWN_NOISE, {"source": str(path)})]


def cmd_classify(args):
    m = _load_model(args.model)
    records = _guard(EXIT_DATA, _read_iq, args.input, args.sample_rate)
    n_fft = m.classifier.input_dim

    def features():
        # records are zero-padded or truncated to the model's DFT size
        return np.stack([spectra.featurize(r, n_fft).values for r in records]).astype(np.float32)

    feats = _guard(EXIT_DATA, features)
    if args.closed_set:
        cls, conf = _guard(EXIT_MODEL, densenet.predict, m.classifier, feats)
        for c, p in zip(cls, conf):
            print(json.dumps({"class": WaveformClass(int(c)).name, "confidence": float(p)}))
        return
    for v in _guard(EXIT_MODEL, osr.classify_open_set_batch, m, feats):
        print(json.dumps(v.to_dict()))


def cmd_inspect(args):
    m = _load_model(args.model)
    clf = m.classifier
    info = {
        "input_dim": clf.input_dim,
        "layers": [{"width": s.width, "activation": s.activation.value, "dropout": s.dropout_rate}
                   for s in clf.layers],
        "embedding_tap": clf.embedding_tap,
        "standardized": clf.standardized,
        "trained": clf.trained,
        "n_params": clf.n_params(),
        "fusion_rule": m.fusion_rule.value,
        "detectors": {
            WaveformClass(c).name: {"n_trees": d.n_trees, "subsample": d.subsample,
                                    "contamination": d.contamination,
                                    "score_threshold": d.score_threshold,
                                    "c_subsample": c_factor(d.subsample)}
            for c, d in sorted(m.detectors.items())
        },
    }
    print(json.dumps(info, indent=2))


def cmd_run(args):
    manifest = _guard(EXIT_CONFIG, load_manifest, args.manifest) if args.manifest else None
    cfg = None
    if args.config:
        cfg = _guard(EXIT_CONFIG, ClassifierConfig.from_dict, _read_json(args.config))
    log = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    res = _guard(EXIT_DATA, run_pipeline, args.out, manifest, cfg, None,
                 not args.skip_robustness, log)
    p1, p2, p3 = res.reports[1], res.reports[2], res.reports[3]
    print(json.dumps({
        "closed_set_accuracy": p1.accuracy(),
        "known_accept_rate": p2.known_accept_rate,
        "unknown_reject_rate": p2.unknown_reject_rate,
        "open_set_accuracy_0db_up": p3.pooled_accuracy(0.0),
        "seconds": {k: round(v, 1) for k, v in res.timings.items()},
    }, indent=2))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wosr", description="open-set waveform recognition")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="synthesize a dataset from a manifest")
    s.add_argument("--manifest", required=True, help="JSON manifest (or 'desk' / 'full')")
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(fn=cmd_gen_data)

    s = sub.add_parser("train", help="train the classifier")
    s.add_argument("--data", required=True, type=Path)
    s.add_argument("--config", type=Path, help="JSON classifier/training config")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("train-detectors", help="fit the per-class isolation forests")
    s.add_argument("--data", required=True, type=Path)
    s.add_argument("--model", required=True, type=Path)
    s.add_argument("--contamination", type=float, default=0.02)
    s.add_argument("--per-class", type=int, default=500)
    s.add_argument("--n-trees", type=int, default=100)
    s.add_argument("--min-snr-db", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--fusion", default=FusionRule.ANY_ACCEPTS.value,
                   choices=[r.value for r in FusionRule])
    s.set_defaults(fn=cmd_train_detectors)

    s = sub.add_parser("eval", help="run one evaluation phase")
    s.add_argument("--phase", type=int, choices=(1, 2, 3), required=True)
    s.add_argument("--model", required=True, type=Path)
    s.add_argument("--data", required=True, type=Path)
    s.add_argument("--report", required=True, type=Path, help=".csv or .json")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("classify", help="open-set verdicts for I/Q records, one JSON line each")
    s.add_argument("--model", required=True, type=Path)
    s.add_argument("--input", required=True, type=Path, help="WOSD record file or raw <f4 I/Q")
    s.add_argument("--sample-rate", type=float, default=6.25e6, help="for raw I/Q input")
    s.add_argument("--closed-set", action="store_true", help="bypass the detectors")
    s.set_defaults(fn=cmd_classify)

    s = sub.add_parser("inspect", help="describe a model container")
    s.add_argument("--model", required=True, type=Path)
    s.set_defaults(fn=cmd_inspect)

    s = sub.add_parser("run", help="generate, train, fit detectors and evaluate in one go")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--manifest", help="JSON manifest (default: desk profile)")
    s.add_argument("--config", type=Path)
    s.add_argument("--skip-robustness", action="store_true")
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(fn=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.fn(args)
    except CliError as exc:
        print(f"wosr: {exc}", file=sys.stderr)
        return exc.code
    except (InvalidParams,) as exc:
        print(f"wosr: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvalidState, ContainerError) as exc:
        print(f"wosr: {exc}", file=sys.stderr)
        return EXIT_MODEL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
