import csv
import json
import math

import numpy as np
import pytest

from wosr import densenet, iforest, osr
from wosr.densenet import TrainConfig
from wosr.errors import InvalidInput
from wosr.harness import evaluate
from wosr.harness.datasets import Split
from wosr.osr import FusionRule, OsrModel

DIM = 16
SNRS = np.array([-10.0, 0.0, 10.0])


def known_split(n_per=30, seed=0, with_unknowns=0):
    r = np.random.default_rng(seed)
    centers = np.eye(DIM) * 4.0
    labels = np.repeat(np.arange(7), n_per)
    if with_unknowns:
        labels = np.concatenate([labels, np.repeat([7, 8], with_unknowns)])
    x = np.where(labels[:, None] < 7, centers[np.minimum(labels, 6)], -6.0)
    x = x + r.standard_normal((len(labels), DIM)) * 0.3
    snr = SNRS[np.arange(len(labels)) % 3]
    return Split(x.astype(np.float32), labels, snr)


@pytest.fixture(scope="module")
def trained():
    sp = known_split(80, seed=1)
    clf = densenet.build_mlp(DIM, hidden=(64, 32), dropout=(), seed=0)
    densenet.train(clf, sp.features, sp.labels, TrainConfig(epochs=30, batch_size=32, alpha=0.005))
    dets = osr.fit_detectors(clf, sp.features, sp.labels, per_class=80, n_trees=50, subsample=64)
    return clf, dets


def always_accept(dets):
    return {c: iforest.IsolationForestModel(d.trees, d.subsample, d.contamination, math.inf,
                                            d.n_features, c) for c, d in dets.items()}


def test_confusion_and_accuracy_table():
    true = [0, 0, 1, 1, 1]
    pred = [0, 1, 1, 1, 0]
    cm = evaluate.confusion(true, pred, 2)
    assert cm.tolist() == [[1, 1], [1, 2]]
    table = evaluate.accuracy_table(true, pred, [0, 0, 0, 5, 5], ["A", "B"])
    assert table["0"] == {"n": 3, "overall": 2 / 3, "A": 0.5, "B": 1.0}
    assert table["5"] == {"n": 2, "overall": 0.5, "B": 0.5}
    assert table["all"]["overall"] == 0.6


def test_snr_key():
    assert [evaluate.snr_key(s) for s in (-10.0, 0, 2.5, np.float64(20))] == ["-10", "0", "2.5", "20"]


def test_phase1_perfect_stub_is_diagonal():
    sp = known_split()
    rep = evaluate.run_phase1(lambda x: sp.labels, sp)
    cm = np.array(rep.confusion_matrix)
    assert np.array_equal(cm, np.diag(np.full(7, 30)))
    assert rep.accuracy() == 1.0 and rep.accuracy(0.0) == 1.0
    assert rep.accuracy(10, "OFDM") == 1.0
    assert rep.pooled_accuracy(0.0) == 1.0


def test_phase1_row_sums_equal_class_counts():
    sp = known_split(with_unknowns=5)
    rep = evaluate.run_phase1(lambda x: np.zeros(len(x), dtype=int), sp)
    cm = np.array(rep.confusion_matrix)
    assert cm.sum(axis=1).tolist() == [30] * 7
    assert rep.accuracy() == pytest.approx(1 / 7)
    assert rep.accuracy(cls="SC") == 1.0 and rep.accuracy(cls="FM") == 0.0


def test_pooled_accuracy_is_sample_weighted():
    rep = evaluate.MetricsReport(1, accuracy_by_snr={
        "-5": {"n": 100, "overall": 0.0},
        "0": {"n": 10, "overall": 1.0},
        "5": {"n": 30, "overall": 0.5},
        "all": {"n": 140, "overall": 0.2},
    })
    assert rep.pooled_accuracy(0.0) == pytest.approx(25 / 40)
    assert rep.pooled_accuracy(50.0) is None


def test_phase2_always_accept_rejects_nothing(trained):
    clf, dets = trained
    sp = known_split(with_unknowns=20, seed=5)
    rep = evaluate.run_phase2(always_accept(dets), clf, sp)
    assert rep.unknown_reject_rate == 0.0 and rep.known_accept_rate == 1.0
    assert rep.confusion_matrix == [[210, 0], [40, 0]]


def test_phase2_real_detectors(trained):
    clf, dets = trained
    sp = known_split(with_unknowns=20, seed=6)
    rep = evaluate.run_phase2(dets, clf, sp)
    assert rep.unknown_reject_rate == 1.0
    assert rep.known_accept_rate >= 0.9
    cm = np.array(rep.confusion_matrix)
    assert cm.sum(axis=1).tolist() == [210, 40]
    r = rep.rates_by_snr["0"]
    assert r["known_accept_rate"] + r["known_false_reject_rate"] == pytest.approx(1.0)
    assert r["n_known"] + r["n_unknown"] == np.sum(sp.snr_db == 0)
    assert set(rep.extra["per_detector"]) == set(evaluate.KNOWN_NAMES)
    assert rep.extra["fusion_rule"] == "any_accepts"


def test_phase3_confusion_and_closed_open_relation(trained):
    clf, dets = trained
    sp = known_split(with_unknowns=20, seed=7)
    rep = evaluate.run_phase3(OsrModel(clf, dets), sp)
    cm = np.array(rep.confusion_matrix)
    assert cm.shape == (8, 8)
    assert cm.sum(axis=1).tolist() == [30] * 7 + [40]
    assert rep.extra["open_set_known_accuracy"] <= rep.extra["closed_set_known_accuracy"]
    assert rep.extra["unknown_row_mass"] == 1.0
    opened = evaluate.run_phase3(OsrModel(clf, always_accept(dets)), sp)
    assert opened.extra["open_set_known_accuracy"] == opened.extra["closed_set_known_accuracy"]
    assert np.array(opened.confusion_matrix)[:, 7].sum() == 0


def test_auroc_oracle():
    assert evaluate.auroc([0, 1], [2, 3]) == 1.0
    assert evaluate.auroc([2, 3], [0, 1]) == 0.0
    assert evaluate.auroc([1, 1], [1, 1]) == 0.5
    # one of four pairs misordered
    assert evaluate.auroc([0, 2], [1, 3]) == 0.75
    with pytest.raises(InvalidInput):
        evaluate.auroc([], [1])


def test_csv_schema_and_json_round_trip(tmp_path):
    sp = known_split()
    rep = evaluate.run_phase1(lambda x: sp.labels, sp, meta={"seed": 1})
    p = evaluate.export_metrics(rep, tmp_path / "m.csv")
    with open(p) as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == evaluate.CSV_COLUMNS
    assert all(len(r) == 4 for r in rows)
    metrics = {r[2] for r in rows[1:]}
    assert {"accuracy", "count", "confusion:SC"} <= metrics
    for r in rows[1:]:
        float(r[3])
    j = evaluate.export_metrics(rep, tmp_path / "m.json", "json")
    back = evaluate.load_report(j)
    assert back == rep
    assert json.loads(j.read_text())["meta"] == {"seed": 1}


def test_empty_report_writes_header_only(tmp_path):
    p = evaluate.export_metrics(evaluate.MetricsReport(1), tmp_path / "e.csv")
    assert p.read_text() == "class,snr_db,metric,value\n"


def test_export_errors(tmp_path):
    rep = evaluate.MetricsReport(1, accuracy_by_snr={"all": {"n": 1, "overall": float("nan")}})
    with pytest.raises(InvalidInput):
        evaluate.export_metrics(rep, tmp_path / "nan.csv")
    with pytest.raises(InvalidInput):
        evaluate.export_metrics(evaluate.MetricsReport(1), tmp_path / "x.xml", "xml")
    with pytest.raises(InvalidInput):
        evaluate.export_metrics(evaluate.MetricsReport(1), tmp_path / "no" / "dir.csv")


def test_export_is_deterministic(tmp_path, trained):
    clf, dets = trained
    sp = known_split(with_unknowns=10, seed=3)
    for name in ("a", "b"):
        rep = evaluate.run_phase2(dets, clf, sp, FusionRule.ALL_MUST_ACCEPT)
        evaluate.export_metrics(rep, tmp_path / f"{name}.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_mismatched_split_rejected():
    sp = known_split()
    bad = Split(sp.features, sp.labels[:-1], sp.snr_db)
    with pytest.raises(InvalidInput):
        evaluate.run_phase1(lambda x: np.zeros(len(x)), bad)
