"""Three-phase evaluation and metric export.

Phase 1 scores the classifier alone on known test records, phase 2 the
detector suite on known and unknown records, phase 3 the full open-set
system with an 8-way confusion matrix whose last row and column are Unknown.

Metric files hold only values derived from the data and the seeds, so two
runs from the same seeds write byte-identical files. Wall-clock timings are
kept by the caller and never exported.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .. import densenet
from ..densenet import MlpModel
from ..errors import InvalidInput
from ..osr import UNKNOWN, FusionRule, OsrModel, detect
from ..wavegen import KNOWN_CLASSES

KNOWN_NAMES = [c.name for c in KNOWN_CLASSES]
OPEN_NAMES = KNOWN_NAMES + ["UNKNOWN"]
CSV_COLUMNS = ("class", "snr_db", "metric", "value")
ALL = "all"


def snr_key(snr) -> str:
    """Stable text key for an SNR bin: ``-10``, ``0``, ``2.5``."""
    return format(float(snr), "g")


def _rate(hits, total):
    return None if total == 0 else float(hits) / float(total)


@dataclass
class MetricsReport:
    """Results of one evaluation phase.

    ``accuracy_by_snr`` maps an SNR key (plus ``"all"``) to a dict of
    per-class accuracies and an ``"overall"`` entry; classes absent from a bin
    are left out rather than stored as NaN. ``confusion_matrix`` rows are true
    classes and columns predictions, both in ``class_names`` order.
    """

    phase: int
    class_names: list = field(default_factory=list)
    accuracy_by_snr: dict = field(default_factory=dict)
    confusion_matrix: list = field(default_factory=list)
    known_accept_rate: float | None = None
    unknown_reject_rate: float | None = None
    rates_by_snr: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def accuracy(self, snr="all", cls: str = "overall"):
        return self.accuracy_by_snr.get(snr if snr == ALL else snr_key(snr), {}).get(cls)

    def pooled_accuracy(self, min_snr_db: float) -> float | None:
        """Sample-weighted overall accuracy over every bin at or above ``min_snr_db``."""
        hits = total = 0
        for key, row in self.accuracy_by_snr.items():
            if key == ALL or float(key) < min_snr_db:
                continue
            hits += row["overall"] * row["n"]
            total += row["n"]
        return _rate(hits, total)


def confusion(true, pred, n: int) -> np.ndarray:
    cm = np.zeros((n, n), dtype=np.int64)
    np.add.at(cm, (np.asarray(true, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
    return cm


def accuracy_table(true, pred, snr_db, names) -> dict:
    """Per-SNR-bin and pooled accuracy, overall and per class, with sample counts."""
    true = np.asarray(true)
    pred = np.asarray(pred)
    snr_db = np.asarray(snr_db, dtype=np.float64)
    out = {}

    def row(mask):
        r = {"n": int(mask.sum())}
        if r["n"]:
            r["overall"] = float(np.mean(pred[mask] == true[mask]))
        for i, name in enumerate(names):
            m = mask & (true == i)
            if m.any():
                r[name] = float(np.mean(pred[m] == i))
        return r

    for s in np.unique(snr_db):
        out[snr_key(s)] = row(snr_db == s)
    if len(true):
        out[ALL] = row(np.ones(len(true), dtype=bool))
    return out


def _check_split(split):
    if len(split.features) != len(split.labels) or len(split.labels) != len(split.snr_db):
        raise InvalidInput("split features, labels and snr_db differ in length")


def _closed_predictions(classifier, features) -> np.ndarray:
    # a stub classifier is any callable mapping features to class indices
    if isinstance(classifier, MlpModel):
        if len(features) == 0:
            return np.zeros(0, dtype=np.int64)
        return densenet.predict(classifier, features)[0]
    return np.asarray(classifier(features), dtype=np.int64)


def run_phase1(classifier, split, meta: dict | None = None) -> MetricsReport:
    """Closed-set accuracy of the classifier on the known records of ``split``."""
    _check_split(split)
    known = np.asarray(split.labels) < len(KNOWN_CLASSES)
    y = np.asarray(split.labels)[known]
    snr = np.asarray(split.snr_db)[known]
    pred = _closed_predictions(classifier, np.asarray(split.features)[known])
    return MetricsReport(
        phase=1,
        class_names=list(KNOWN_NAMES),
        accuracy_by_snr=accuracy_table(y, pred, snr, KNOWN_NAMES),
        confusion_matrix=confusion(y, pred, len(KNOWN_NAMES)).tolist(),
        meta=dict(meta or {}),
    )


def run_phase2(detectors: dict, classifier: MlpModel, split,
               fusion_rule: FusionRule = FusionRule.ANY_ACCEPTS,
               meta: dict | None = None) -> MetricsReport:
    """Known-acceptance and unknown-rejection rates of the fused detector suite.

    The confusion matrix is 2x2: rows (known, unknown) truth, columns
    (accepted, rejected). ``extra["per_detector"]`` gives each class
    detector's acceptance of its own class and its rejection of unknowns.
    """
    _check_split(split)
    det = detect(OsrModel(classifier, detectors, fusion_rule), split.features)
    labels = np.asarray(split.labels)
    snr = np.asarray(split.snr_db, dtype=np.float64)
    known = labels < len(KNOWN_CLASSES)
    rej = det.rejected

    def rates(mask):
        k, u = mask & known, mask & ~known
        return {
            "known_accept_rate": _rate(np.sum(~rej[k]), k.sum()),
            "known_false_reject_rate": _rate(np.sum(rej[k]), k.sum()),
            "unknown_reject_rate": _rate(np.sum(rej[u]), u.sum()),
            "n_known": int(k.sum()),
            "n_unknown": int(u.sum()),
        }

    by_snr = {snr_key(s): rates(snr == s) for s in np.unique(snr)}
    pooled = rates(np.ones(len(labels), dtype=bool))
    by_snr[ALL] = pooled
    per_detector = {}
    for j, name in enumerate(KNOWN_NAMES):
        own = labels == j
        per_detector[name] = {
            "own_class_accept_rate": _rate(np.sum(~det.flags[own, j]), own.sum()),
            "unknown_reject_rate": _rate(np.sum(det.flags[~known, j]), (~known).sum()),
        }
    cm = np.zeros((2, 2), dtype=np.int64)
    np.add.at(cm, ((~known).astype(int), rej.astype(int)), 1)
    return MetricsReport(
        phase=2,
        class_names=["KNOWN", "UNKNOWN"],
        confusion_matrix=cm.tolist(),
        known_accept_rate=pooled["known_accept_rate"],
        unknown_reject_rate=pooled["unknown_reject_rate"],
        rates_by_snr=by_snr,
        extra={"per_detector": per_detector, "fusion_rule": FusionRule(fusion_rule).value},
        meta=dict(meta or {}),
    )


def run_phase3(model: OsrModel, split, meta: dict | None = None) -> MetricsReport:
    """End-to-end 8-way evaluation; every unknown kind maps to the Unknown row.

    ``extra`` also records closed-set and open-set accuracy on the identical
    known records so the rejection cost can be checked directly.
    """
    _check_split(split)
    det = detect(model, split.features)
    labels = np.asarray(split.labels)
    snr = np.asarray(split.snr_db, dtype=np.float64)
    known = labels < len(KNOWN_CLASSES)
    true = np.where(known, labels, UNKNOWN)
    pred = det.open_set
    cm = confusion(true, pred, len(OPEN_NAMES))
    closed_hits = int(np.sum(det.closed_set[known] == labels[known]))
    open_hits = int(np.sum(pred[known] == labels[known]))
    unk_row = cm[UNKNOWN]
    return MetricsReport(
        phase=3,
        class_names=list(OPEN_NAMES),
        accuracy_by_snr=accuracy_table(true, pred, snr, OPEN_NAMES),
        confusion_matrix=cm.tolist(),
        known_accept_rate=_rate(np.sum(~det.rejected[known]), known.sum()),
        unknown_reject_rate=_rate(np.sum(det.rejected[~known]), (~known).sum()),
        extra={
            "closed_set_known_accuracy": _rate(closed_hits, known.sum()),
            "open_set_known_accuracy": _rate(open_hits, known.sum()),
            "unknown_row_mass": _rate(unk_row[UNKNOWN], unk_row.sum()),
            "fusion_rule": model.fusion_rule.value,
        },
        meta=dict(meta or {}),
    )


def auroc(inlier_scores, outlier_scores) -> float:
    """Area under the ROC curve for "outliers score higher", ties counted half."""
    a = np.asarray(inlier_scores, dtype=np.float64).ravel()
    b = np.asarray(outlier_scores, dtype=np.float64).ravel()
    if len(a) == 0 or len(b) == 0:
        raise InvalidInput("auroc needs at least one score on each side")
    ranks = rankdata(np.concatenate([a, b]))
    u = ranks[len(a):].sum() - len(b) * (len(b) + 1) / 2.0
    return float(u / (len(a) * len(b)))


# ----------------------------------------------------------------------------
# export


def csv_rows(report: MetricsReport) -> list:
    """Flatten a report into ``(class, snr_db, metric, value)`` rows."""
    rows = []
    for key, row in report.accuracy_by_snr.items():
        for name, value in row.items():
            if name == "n":
                continue
            rows.append((name, key, "accuracy", value))
        rows.append(("overall", key, "count", row["n"]))
    for key, rates in report.rates_by_snr.items():
        for metric, value in rates.items():
            if value is not None:
                rows.append(("overall", key, metric, value))
    for metric in ("known_accept_rate", "unknown_reject_rate"):
        value = getattr(report, metric)
        if value is not None and not report.rates_by_snr:
            rows.append(("overall", ALL, metric, value))
    for i, true_name in enumerate(report.class_names if report.confusion_matrix else []):
        for j, pred_name in enumerate(report.class_names):
            rows.append((true_name, ALL, f"confusion:{pred_name}", report.confusion_matrix[i][j]))
    rows.sort(key=lambda r: (r[2], r[0], _snr_sort(r[1])))
    return rows


def _snr_sort(key):
    return (1, 0.0) if key == ALL else (0, float(key))


def _fmt(value):
    if isinstance(value, float):
        if math.isnan(value):
            raise InvalidInput("metrics must not contain NaN")
        return repr(value)
    return str(value)


def export_metrics(report: MetricsReport, path, fmt: str = "csv") -> Path:
    """Write ``report`` as CSV (``class,snr_db,metric,value``) or JSON."""
    path = Path(path)
    fmt = fmt.lower()
    if fmt not in ("csv", "json"):
        raise InvalidInput(f"unknown metrics format {fmt!r}")
    try:
        if fmt == "json":
            path.write_text(report.to_json() + "\n")
        else:
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(CSV_COLUMNS)
                for r in csv_rows(report):
                    w.writerow([r[0], r[1], r[2], _fmt(r[3])])
    except OSError as exc:
        raise InvalidInput(f"cannot write metrics to {path}: {exc}") from exc
    return path


def load_report(path) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(Path(path).read_text()))
