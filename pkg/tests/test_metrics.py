from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bindelta import metrics, so3
from bindelta.metrics import MetricReport

GOLDEN = Path(__file__).parent / "golden" / "seeded_report.csv"


def three_sample_example():
    gts = np.array([[0, 0, np.radians(a)] for a in (10.0, 20.0, 40.0)])
    return np.zeros((3, 3)), gts


def seeded_predictions():
    rng = np.random.default_rng(2024)
    gts = so3.log_map(so3.sample_uniform_rotation(rng, 240))
    noise = rng.normal(size=(240, 3)) * rng.uniform(0.05, 1.2, size=(240, 1))
    preds = so3.log_map(so3.exp_map(gts) @ so3.exp_map(noise))
    return preds, gts, np.arange(240) % 4


def test_three_sample_example():
    rep = metrics.compute_metrics(*three_sample_example())
    assert rep.mean_med_err == pytest.approx(20.0)
    assert rep.mean_acc == pytest.approx(2 / 3)
    assert rep.counts == [3]


def test_accuracy_threshold_is_strict():
    preds = np.zeros((2, 3))
    gts = np.array([[0, 0, 0.4], [0, 0, 0.3]])
    at = float(metrics.angle_error(preds[0], gts[0]))
    assert metrics.compute_metrics(preds, gts, threshold=at).acc == [0.5]
    assert metrics.ACC_THRESHOLD == np.pi / 6


def test_median_conventions():
    assert metrics.median([4.0, 1.0, 3.0, 2.0]) == 2.0
    assert metrics.median([4.0, 1.0, 3.0, 2.0], interpolate=True) == 2.5
    assert np.isnan(metrics.median([]))


def test_category_mean_is_unweighted():
    preds = np.zeros((4, 3))
    gts = np.array([[0, 0, np.radians(10.0)]] * 3 + [[0, 0, np.radians(50.0)]])
    rep = metrics.compute_metrics(preds, gts, categories=[0, 0, 0, 1], names={0: "a", 1: "b"})
    assert rep.categories == ["a", "b"]
    assert rep.mean_med_err == pytest.approx(30.0)
    assert rep.mean_acc == pytest.approx(0.5)


def test_length_mismatch():
    with pytest.raises(ValueError):
        metrics.compute_metrics(np.zeros((2, 3)), np.zeros((3, 3)))


def test_reference_table_parses_to_stored_means():
    table = metrics.read_report_csv(metrics.reference_table_path())
    assert table.mean_med_err == 10.10
    assert table.mean_acc == 0.8588
    assert len(table.categories) == 12 and table.categories[0] == "aero"
    assert table.med_err[2] == 20.5 and table.acc[3] == 0.96


def test_json_and_csv_roundtrip(tmp_path):
    rep = metrics.compute_metrics(*seeded_predictions(), meta={"seed": 2024})
    metrics.emit_report(rep, tmp_path / "r.json", "json")
    assert MetricReport.from_json((tmp_path / "r.json").read_text()) == rep
    metrics.emit_report(rep, tmp_path / "r.csv", "csv")
    back = metrics.read_report_csv(tmp_path / "r.csv")
    np.testing.assert_allclose(back.med_err, rep.med_err, atol=0.005)
    np.testing.assert_allclose(back.acc, rep.acc, atol=5e-5)
    with pytest.raises(ValueError):
        metrics.emit_report(rep, tmp_path / "r.xml", "xml")


def test_golden_report():
    rep = metrics.compute_metrics(*seeded_predictions())
    assert metrics.report_csv(rep) == GOLDEN.read_text()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_permutation_invariance(seed):
    preds, gts, cats = seeded_predictions()
    perm = np.random.default_rng(seed).permutation(len(gts))
    a = metrics.compute_metrics(preds, gts, cats)
    b = metrics.compute_metrics(preds[perm], gts[perm], cats[perm])
    assert a == b


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, np.pi), st.floats(0.01, np.pi))
def test_accuracy_is_monotone_in_threshold(t1, t2):
    preds, gts, _ = seeded_predictions()
    lo, hi = sorted((t1, t2))
    assert (metrics.compute_metrics(preds, gts, threshold=lo).mean_acc
            <= metrics.compute_metrics(preds, gts, threshold=hi).mean_acc)
