"""Report file outputs: JSON, CSV, and rendered figures."""

import csv
import json

import numpy as np
import pytest

from affectloop.features_ml import AffectClass, FeatureVector, evaluate
from affectloop.report import write_cv_outputs, write_metrics_outputs
from affectloop.session_engine import SessionMetrics

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
LOW, NEU, HIGH = AffectClass.Low, AffectClass.Neutral, AffectClass.High


@pytest.fixture(scope="module")
def toy_reports():
    rng = np.random.default_rng(5)
    rows = []
    for i, cls in enumerate([LOW, NEU, HIGH] * 10):
        center = np.zeros(96)
        center[[LOW, NEU, HIGH].index(cls)] = 4.0
        rows.append(FeatureVector(1.5 * i, center + 0.2 * rng.standard_normal(96), cls))
    report = evaluate(rows, k_features=4)
    return {"arousal": report, "valence": report}


def sample_metrics():
    return SessionMetrics(
        agreement_rate=0.75,
        arousal_consistency=0.5,
        valence_consistency=1.0,
        arousal_confusion=np.array([[2, 0, 0], [1, 0, 0], [0, 0, 3]]),
        valence_confusion=np.array([[1, 0, 0], [0, 2, 0], [0, 0, 3]]),
        n_agree_trials=4,
        n_sam_trials=6,
    )


def test_cv_outputs_complete_and_parse(tmp_path, toy_reports):
    written = write_cv_outputs(toy_reports, str(tmp_path))
    names = {p.split("/")[-1] for p in written}
    assert names == {"cv_report.json", "cv_folds.csv", "confusion_arousal.csv",
                     "confusion_arousal.png", "confusion_valence.csv",
                     "confusion_valence.png", "fold_accuracy.png"}
    doc = json.loads((tmp_path / "cv_report.json").read_text())
    assert doc["arousal"]["mean_accuracy"] == pytest.approx(
        toy_reports["arousal"].mean_accuracy)
    with open(tmp_path / "cv_folds.csv") as fh:
        rows = list(csv.DictReader(fh))
    fold_rows = [r for r in rows if r["axis"] == "arousal" and r["fold"] != "mean"]
    got = [float(r["accuracy"]) for r in fold_rows]
    assert got == list(toy_reports["arousal"].fold_accuracies)
    for name in ("confusion_arousal.png", "fold_accuracy.png"):
        data = (tmp_path / name).read_bytes()
        assert data.startswith(PNG_MAGIC) and len(data) > 1000


def test_confusion_csv_matches_report(tmp_path, toy_reports):
    write_cv_outputs(toy_reports, str(tmp_path))
    with open(tmp_path / "confusion_valence.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["true\\predicted", "Low", "Neutral", "High"]
    matrix = np.array([[int(v) for v in row[1:]] for row in rows[1:]])
    assert np.array_equal(matrix, np.asarray(toy_reports["valence"].confusion))


def test_cv_delimited_outputs_deterministic(tmp_path, toy_reports):
    a_dir, b_dir = tmp_path / "a", tmp_path / "b"
    write_cv_outputs(toy_reports, str(a_dir))
    write_cv_outputs(toy_reports, str(b_dir))
    for name in ("cv_report.json", "cv_folds.csv", "confusion_arousal.csv"):
        assert (a_dir / name).read_bytes() == (b_dir / name).read_bytes()


def test_metrics_outputs_complete(tmp_path):
    written = write_metrics_outputs(sample_metrics(), str(tmp_path))
    names = {p.split("/")[-1] for p in written}
    assert names == {"metrics.json", "metrics.csv", "probe_confusion_arousal.png",
                     "probe_confusion_valence.png", "agreement.png"}
    doc = json.loads((tmp_path / "metrics.json").read_text())
    assert doc["agreement_rate"] == 0.75
    assert doc["confusion"]["arousal"][2][2] == 3
    with open(tmp_path / "metrics.csv") as fh:
        rows = {r["metric"]: r["value"] for r in csv.DictReader(fh)}
    assert float(rows["agreement_rate"]) == 0.75
    assert rows["n_sam_trials"] == "6"
    assert (tmp_path / "agreement.png").read_bytes().startswith(PNG_MAGIC)


def test_metrics_outputs_skip_absent_figures(tmp_path):
    empty = SessionMetrics(agreement_rate=None, arousal_consistency=None,
                           valence_consistency=None, arousal_confusion=None,
                           valence_confusion=None, n_agree_trials=0,
                           n_sam_trials=0)
    written = write_metrics_outputs(empty, str(tmp_path))
    names = {p.split("/")[-1] for p in written}
    assert names == {"metrics.json", "metrics.csv"}
    with open(tmp_path / "metrics.csv") as fh:
        rows = {r["metric"]: r["value"] for r in csv.DictReader(fh)}
    assert rows["agreement_rate"] == ""
