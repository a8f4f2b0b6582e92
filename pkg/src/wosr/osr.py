"""Open-set decisions: the classifier plus one isolation forest per known class.

Each detector sees the classifier's 32-dim embedding and flags the sample as
an outlier of its own class. Under the default ``ANY_ACCEPTS`` rule a sample
is unknown only when every detector flags it; ``ALL_MUST_ACCEPT`` rejects it
as soon as one detector does. Accepted samples keep the classifier's argmax.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import densenet, iforest
from .densenet import MlpModel
from .errors import InvalidInput, InvalidState
from .wavegen import KNOWN_CLASSES, WaveformClass

UNKNOWN = len(KNOWN_CLASSES)  # label index of the rejection class in 8-way outputs


class FusionRule(str, enum.Enum):
    ANY_ACCEPTS = "any_accepts"
    ALL_MUST_ACCEPT = "all_must_accept"


@dataclass
class OsrModel:
    classifier: MlpModel
    detectors: dict = field(default_factory=dict)  # class index -> IsolationForestModel
    fusion_rule: FusionRule = FusionRule.ANY_ACCEPTS

    def __post_init__(self):
        self.fusion_rule = FusionRule(self.fusion_rule)

    def ordered_detectors(self) -> list:
        missing = [c.name for c in KNOWN_CLASSES if int(c) not in self.detectors]
        if missing:
            raise InvalidState(f"no detector for {', '.join(missing)}")
        return [self.detectors[int(c)] for c in KNOWN_CLASSES]


@dataclass
class OsrVerdict:
    known: bool
    label: WaveformClass | None
    confidence: float | None
    detector_scores: np.ndarray
    detector_flags: np.ndarray
    embedding: np.ndarray

    @property
    def decision(self) -> str:
        return "known" if self.known else "unknown"

    def to_dict(self) -> dict:
        return {
            "decision": self.decision,
            "class": None if self.label is None else self.label.name,
            "confidence": self.confidence,
            "scores": [float(s) for s in self.detector_scores],
            "flags": [bool(f) for f in self.detector_flags],
        }


def select_detector_points(labels, per_class: int = 500, seed: int = 0, snr_db=None,
                           min_snr_db: float | None = None) -> dict:
    """Seeded random draw of up to ``per_class`` record indices per known class.

    With ``min_snr_db`` set (and ``snr_db`` given) only records at or above it
    are eligible. Indices come back sorted.
    """
    labels = np.asarray(labels)
    eligible = np.ones(len(labels), dtype=bool)
    if min_snr_db is not None:
        if snr_db is None:
            raise InvalidInput("min_snr_db needs per-record snr_db")
        eligible &= np.asarray(snr_db) >= min_snr_db
    out = {}
    for c in KNOWN_CLASSES:
        idx = np.flatnonzero(eligible & (labels == int(c)))
        if len(idx) < 2:
            raise InvalidInput(f"too few {c.name} records to fit a detector")
        rng = np.random.default_rng([seed, int(c)])
        out[int(c)] = np.sort(rng.permutation(idx)[:per_class])
    return out


def fit_detectors(classifier: MlpModel, features, labels, per_class: int = 500,
                  contamination: float = 0.02, n_trees: int = 100, subsample: int = 256,
                  seed: int = 0, snr_db=None, min_snr_db: float | None = None) -> dict:
    """One forest per known class on embeddings of a random draw of that class.

    Record selection follows ``select_detector_points``. The subsample size
    shrinks to the available count if needed.
    """
    chosen = select_detector_points(labels, per_class, seed, snr_db, min_snr_db)
    features = np.asarray(features)
    detectors = {}
    for c, take in chosen.items():
        emb = densenet.embed(classifier, features[take])
        detectors[c] = iforest.fit(
            emb, n_trees=n_trees, subsample=min(subsample, len(take)),
            contamination=contamination, seed=int(np.random.SeedSequence([seed, c]).generate_state(1)[0]),
            class_tag=c,
        )
    return detectors


@dataclass
class Detection:
    """Batch results: classifier outputs plus every detector's score and flag."""

    probs: np.ndarray
    embedding: np.ndarray
    scores: np.ndarray   # (n, 7)
    flags: np.ndarray    # (n, 7), True = outlier for that class
    rejected: np.ndarray  # (n,)

    @property
    def closed_set(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1)

    @property
    def open_set(self) -> np.ndarray:
        """Class index per sample, ``UNKNOWN`` where the fusion rule rejected it."""
        return np.where(self.rejected, UNKNOWN, self.closed_set)


def fuse(flags: np.ndarray, rule: FusionRule) -> np.ndarray:
    flags = np.asarray(flags, dtype=bool)
    if FusionRule(rule) is FusionRule.ANY_ACCEPTS:
        return flags.all(axis=1)
    return flags.any(axis=1)


def detect(model: OsrModel, features) -> Detection:
    detectors = model.ordered_detectors()
    clf = model.classifier
    if not clf.trained:
        raise InvalidState("classifier has not been trained")
    if clf.embedding_tap is None:
        raise InvalidState("classifier has no embedding layer")
    x = np.asarray(features)
    if x.ndim == 1:
        x = x[None, :]
    probs, cache = densenet.forward(clf, x)
    emb = cache.post[clf.embedding_tap]
    scores = np.empty((len(x), len(detectors)))
    flags = np.empty((len(x), len(detectors)), dtype=bool)
    for j, det in enumerate(detectors):
        flags[:, j], scores[:, j] = iforest.is_outlier(det, emb)
    return Detection(probs, emb, scores, flags, fuse(flags, model.fusion_rule))


def _values(feature):
    return feature.values if hasattr(feature, "values") and not isinstance(feature, np.ndarray) else feature


def verdicts(det: Detection) -> list:
    out = []
    cls = det.closed_set
    for i in range(len(cls)):
        known = not det.rejected[i]
        out.append(OsrVerdict(
            known=known,
            label=WaveformClass(int(cls[i])) if known else None,
            confidence=float(det.probs[i, cls[i]]) if known else None,
            detector_scores=det.scores[i].copy(),
            detector_flags=det.flags[i].copy(),
            embedding=det.embedding[i].copy(),
        ))
    return out


def classify_open_set(model: OsrModel, feature) -> OsrVerdict:
    """Verdict for one ``SpectrumFeature`` (or bare feature vector)."""
    x = np.asarray(_values(feature))
    if x.ndim != 1:
        raise InvalidInput("classify_open_set takes a single feature; use classify_open_set_batch")
    return verdicts(detect(model, x))[0]


def classify_open_set_batch(model: OsrModel, features) -> list:
    return verdicts(detect(model, features))


def classify_closed_set(model: OsrModel, feature):
    """The classifier alone, detectors bypassed: ``(WaveformClass, confidence)``."""
    x = np.asarray(_values(feature))
    cls, conf = densenet.predict(model.classifier, x)
    if x.ndim == 1:
        return WaveformClass(cls), conf
    return cls, conf
