# afc/test_evaluate.py
"""
Tests for contingency counting, metrics, FPAF, the corrected final accuracy
and report assembly.

Run: pytest afc/test_evaluate.py -v
"""

import json

import numpy as np
import pandas as pd
import pytest

from errors import UsageError
from evaluate import (
    ContingencyCounts,
    binary_contingency,
    build_turbine_report,
    confusion_matrix,
    contingency_fractions,
    contingency_table,
    final_accuracy,
    fpaf,
    metrics,
    model_contingency,
    multiclass_micro,
    per_alarm_breakdown,
    report_to_csv,
    summary_table,
)

# 7 flagged windows, 6 of them true alarms, 5 of those tagged correctly,
# plus one alarm the regression missed
TRUTH_TAGS = [1, 2, 1, 2, 1, 2, 0, 0, 0, 1]
REGRESSION = [1, 1, 1, 1, 1, 1, 1, 0, 0, 0]
FLAGGED_TAGS = [1, 2, 1, 2, 1, 1, 2]


# ============================================================================
# Binary contingency / metrics
# ============================================================================

def test_binary_contingency_examples():
    assert binary_contingency([1, 0, 1], [1, 0, 1]) == ContingencyCounts(tp=2, fp=0, fn=0, tn=1)
    assert binary_contingency([1, 1], [0, 0]).fp == 2


def test_binary_contingency_errors():
    with pytest.raises(UsageError):
        binary_contingency([1, 0], [1])
    with pytest.raises(UsageError):
        binary_contingency([2, 0], [1, 0])


def test_metrics_formulas():
    report = metrics(ContingencyCounts(tp=5, fp=1, fn=2, tn=2))
    assert report.precision == pytest.approx(5 / 6)
    assert report.recall == pytest.approx(5 / 7)
    assert report.accuracy == pytest.approx(0.7)
    assert report.f1 == pytest.approx(10 / 13)


def test_metrics_undefined_marker():
    report = metrics(ContingencyCounts(tp=0, fp=0, fn=3, tn=1))
    assert report.precision is None
    assert report.recall == 0.0
    assert metrics(ContingencyCounts()).accuracy is None


def test_metrics_against_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 20))
        p = rng.integers(0, 2, size=n)
        t = rng.integers(0, 2, size=n)
        report = metrics(binary_contingency(p, t))

        tp = sum(1 for a, b in zip(p, t) if a == 1 and b == 1)
        fp = sum(1 for a, b in zip(p, t) if a == 1 and b == 0)
        fn = sum(1 for a, b in zip(p, t) if a == 0 and b == 1)
        assert report.accuracy == pytest.approx(sum(1 for a, b in zip(p, t) if a == b) / n)
        assert report.precision == (None if tp + fp == 0 else pytest.approx(tp / (tp + fp)))
        assert report.recall == (None if tp + fn == 0 else pytest.approx(tp / (tp + fn)))
        if report.precision and report.recall:
            harmonic = 2 * report.precision * report.recall / (report.precision + report.recall)
            assert report.f1 == pytest.approx(harmonic)


# ============================================================================
# Multiclass
# ============================================================================

def test_multiclass_micro_examples():
    assert multiclass_micro([1, 2, 3], [1, 2, 3]).recall == 1.0
    report = multiclass_micro([1, 2, 2, 3], [1, 2, 3, 3])
    assert report.precision == report.recall == report.f1 == report.accuracy == pytest.approx(0.75)


def test_multiclass_micro_pooling_oracle():
    rng = np.random.default_rng(1)
    truth = rng.integers(1, 6, size=500)
    preds = np.where(rng.uniform(size=500) < 0.6, truth, rng.integers(1, 6, size=500))

    tp = fp = fn = 0
    for tag in np.union1d(truth, preds):
        tp += int(np.sum((preds == tag) & (truth == tag)))
        fp += int(np.sum((preds == tag) & (truth != tag)))
        fn += int(np.sum((preds != tag) & (truth == tag)))
    report = multiclass_micro(preds, truth)
    assert report.precision == pytest.approx(tp / (tp + fp))
    assert report.recall == pytest.approx(tp / (tp + fn))


def test_multiclass_micro_empty_and_errors():
    assert multiclass_micro([], []).recall is None
    with pytest.raises(UsageError):
        multiclass_micro([1, 0], [1, 1])
    with pytest.raises(UsageError):
        multiclass_micro([1], [1, 2])


# ============================================================================
# FPAF / final accuracy
# ============================================================================

def test_fpaf_examples():
    truth = [1 if t > 0 else 0 for t in TRUTH_TAGS]
    assert fpaf(REGRESSION, truth).fpaf_fraction == pytest.approx(1 / 7)
    assert fpaf([1, 1, 0], [1, 1, 0]).fpaf_fraction == 0.0
    assert fpaf([1, 1, 0], [0, 0, 1]).fpaf_fraction == 1.0
    assert fpaf([0, 0], [1, 0]).fpaf_fraction is None


def test_final_accuracy_worked_example():
    truth = [1 if t > 0 else 0 for t in TRUTH_TAGS]
    flagged_truth = [t for t, p in zip(TRUTH_TAGS, REGRESSION) if p == 1]
    report = final_accuracy(REGRESSION, truth, FLAGGED_TAGS, flagged_truth)

    assert report.predicted_alarms == 7
    assert report.regression_tp == 6
    assert report.classifier_correct == 5
    assert report.final_accuracy == pytest.approx(5 / 7)
    # corrected score never exceeds regression precision
    assert report.final_accuracy <= metrics(binary_contingency(REGRESSION, truth)).precision
    assert report.fpaf_fraction + report.regression_tp / report.predicted_alarms == pytest.approx(1.0, abs=1e-15)


def test_final_accuracy_all_correct():
    report = final_accuracy([1, 1, 0], [1, 1, 0], [3, 4], [3, 4])
    assert report.final_accuracy == 1.0


def test_final_accuracy_false_positive_never_correct():
    # a tag on a window without an alarm is never correct
    report = final_accuracy([1, 1], [1, 0], [2, 2], [2, 0])
    assert report.classifier_correct == 1
    assert report.final_accuracy == 0.5


def test_final_accuracy_perfect_regression_equals_classifier_accuracy():
    rng = np.random.default_rng(3)
    tags = rng.integers(1, 5, size=200)
    guesses = rng.integers(1, 5, size=200)
    ones = np.ones(200, dtype=int)

    report = final_accuracy(ones, ones, guesses, tags)
    assert report.final_accuracy == pytest.approx(multiclass_micro(guesses, tags).accuracy)


def test_final_accuracy_coverage_mismatch():
    with pytest.raises(UsageError):
        final_accuracy([1, 1, 0], [1, 1, 0], [1], [1])
    with pytest.raises(UsageError):
        # tag says alarm but the binary truth says none
        final_accuracy([1, 0], [0, 0], [1], [1])


# ============================================================================
# Per-alarm / confusion
# ============================================================================

def test_per_alarm_single_tag():
    report = per_alarm_breakdown([4, 4, 0], [4, 4, 0])
    assert report.rows == [{'tag': 4, 'occurrences': 2, 'forecast': 2, 'correct': 2, 'accuracy': 1.0}]


def test_per_alarm_planted_accuracies():
    truth = [1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 0, 0]
    final = [1, 1, 1, 1, 2, 2, 1, 0, 1, 0, 0, 2]
    report = per_alarm_breakdown(final, truth)

    assert [r['tag'] for r in report.rows] == [1, 2, 3]
    assert [r['accuracy'] for r in report.rows] == [1.0, 0.5, 0.0]
    assert [r['forecast'] for r in report.rows] == [4, 3, 1]
    assert report.frequency == {1: 4, 2: 4, 3: 2}
    assert report.total == sum(1 for t in truth if t > 0)


def test_confusion_matrix():
    np.testing.assert_array_equal(confusion_matrix([1, 2, 3], [1, 2, 3], 3), np.eye(3, dtype=int))

    single = confusion_matrix([5], [2], 5)
    assert single[1, 4] == 1
    assert single.sum() == 1

    rng = np.random.default_rng(4)
    truth = rng.integers(1, 5, size=100)
    preds = rng.integers(1, 5, size=100)
    matrix = confusion_matrix(preds, truth, 4)
    assert matrix.sum() == 100
    np.testing.assert_array_equal(matrix.sum(axis=1), np.bincount(truth, minlength=5)[1:])
    np.testing.assert_array_equal(matrix.sum(axis=0), np.bincount(preds, minlength=5)[1:])


def test_confusion_matrix_out_of_range():
    with pytest.raises(UsageError):
        confusion_matrix([4], [1], 3)
    with pytest.raises(UsageError):
        confusion_matrix([1], [0], 3)


# ============================================================================
# Contingency fractions
# ============================================================================

def test_model_contingency():
    counts = model_contingency(REGRESSION, TRUTH_TAGS, FLAGGED_TAGS)
    assert counts == ContingencyCounts(tp=5, fp=2, fn=1, tn=2)


def test_contingency_fractions_single_turbine():
    result = contingency_fractions([{'RF': ContingencyCounts(tp=8, fp=1, fn=1, tn=5)}])
    assert result['RF'] == pytest.approx({'FP': 0.1, 'FN': 0.1, 'TP': 0.8})


def test_contingency_fractions_average():
    per_turbine = [
        {'RF': ContingencyCounts(tp=6, fp=2, fn=2)},
        {'RF': ContingencyCounts(tp=6, fp=0, fn=4)},
    ]
    assert contingency_fractions(per_turbine)['RF'] == pytest.approx({'FP': 0.1, 'FN': 0.3, 'TP': 0.6})


def test_contingency_fractions_empty():
    with pytest.raises(UsageError):
        contingency_fractions([])


# ============================================================================
# Reports
# ============================================================================

def _report(turbine="WT11", fw=1, flagged=None):
    flagged = flagged or {
        'KNN': [1, 2, 1, 2, 2, 1, 1],
        'DT': [1, 2, 1, 2, 1, 2, 1],
        'RF': FLAGGED_TAGS,
    }
    return build_turbine_report(turbine, fw, 2, TRUTH_TAGS, REGRESSION, flagged,
                                standalone_preds={'KNN': [1, 2, 1, 2, 1, 2, 1]})


def test_turbine_report():
    report = _report()

    # DT tags all six true alarms correctly on the flagged windows
    assert report.chosen_model == 'DT'
    assert report.pre_fpaf_score == 1.0
    assert report.final_accuracy == pytest.approx(6 / 7)
    assert report.regression_metrics.recall == pytest.approx(6 / 7)
    assert report.classifier_metrics['RF'].recall == pytest.approx(5 / 6)
    assert report.standalone_metrics['KNN'].recall == 1.0
    assert report.confusion.sum() == 6

    payload = report.to_dict()
    assert payload['regression']['final'] == payload['regression']['metrics']['recall']
    assert payload['confusion']['K'] == 2
    assert set(payload['contingency']) == {'DT', 'KNN', 'RF'}
    json.dumps(payload)


def test_turbine_report_confusion_per_classifier(tmp_path):
    report = _report()

    # rows are true tags, columns predicted tags, over flagged true alarms
    assert report.confusion_by_model['KNN'].tolist() == [[2, 1], [1, 2]]
    assert report.confusion_by_model['DT'].tolist() == [[3, 0], [0, 3]]
    assert report.confusion_by_model['RF'].tolist() == [[3, 0], [1, 2]]
    np.testing.assert_array_equal(report.confusion, report.confusion_by_model['DT'])

    payload = report.to_dict()
    assert sorted(payload['confusion_by_model']) == ['DT', 'KNN', 'RF']
    assert payload['confusion_by_model']['RF'] == [[3, 0], [1, 2]]

    frame = pd.read_csv(report_to_csv(report, str(tmp_path / "report.csv")))
    rf = frame[(frame['section'] == 'confusion') & (frame['model'] == 'RF')]
    assert dict(zip(rf['metric'], rf['value'].astype(int))) == {
        'tag1_as_tag1': 3, 'tag1_as_tag2': 0, 'tag2_as_tag1': 1, 'tag2_as_tag2': 2,
    }


def test_summary_table_shape():
    reports = []
    for fw in (1, 2, 3):
        for turbine in ("WT11", "WT12", "WT13", "WT14", "WT15"):
            reports.append(_report(turbine, fw))
    table = summary_table(reports)

    assert table.shape == (3, 6)
    assert list(table.index) == ["FW1", "FW2", "FW3"]
    assert list(table.columns) == ["WT11", "WT12", "WT13", "WT14", "WT15", "Average"]
    assert table.loc["FW2", "Average"] == pytest.approx(6 / 7)


def test_contingency_table():
    table = contingency_table([_report("WT11", 1), _report("WT12", 1)])
    assert list(table.columns) == ['fw', 'model', 'FP', 'FN', 'TP']
    assert sorted(table['model']) == ['DT', 'KNN', 'RF']
    rf = table[table['model'] == 'RF'].iloc[0]
    assert rf['TP'] == pytest.approx(5 / 8)


def test_report_to_csv(tmp_path):
    path = report_to_csv(_report(), str(tmp_path / "report.csv"))
    frame = pd.read_csv(path)

    assert list(frame.columns) == ['section', 'model', 'metric', 'value']
    final = frame[(frame['section'] == 'final') & (frame['metric'] == 'final_accuracy')]
    assert float(final['value'].iloc[0]) == pytest.approx(6 / 7)
