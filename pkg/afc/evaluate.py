"""
Evaluate module for the AFC pipeline.

Scores the two-stage forecast:
- Binary contingency counts and accuracy / precision / recall / F1 for the
  regression stage
- Micro-averaged multiclass metrics for the classifiers
- FPAF (false positive alarm forecast) fraction and the FPAF-corrected final
  accuracy: correctly forecast AND correctly tagged alarms divided by every
  regression-flagged window
- Per-alarm breakdown, confusion matrix, contingency fractions, summary table
- JSON / CSV report assembly

Any 0/0 metric is reported as None, never as 0 and never as an exception.

Author: AFC Development Team
"""

import logging
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import accuracy_score, precision_recall_fscore_support
from sklearn.metrics import confusion_matrix as sk_confusion_matrix

from errors import UsageError

logger = logging.getLogger(__name__)

CLASSIFIER_NAMES = ('KNN', 'DT', 'RF')


def _ratio(numerator: float, denominator: float) -> Optional[float]:
    return None if denominator == 0 else numerator / denominator


@dataclass
class ContingencyCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> Dict[str, int]:
        return {'tp': self.tp, 'fp': self.fp, 'fn': self.fn, 'tn': self.tn}


@dataclass
class MetricReport:
    accuracy: Optional[float] = None
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None

    def to_dict(self) -> Dict[str, Optional[float]]:
        return asdict(self)


@dataclass
class FpafReport:
    """
    Regression false positives and the corrected final accuracy.

    classifier_correct and final_accuracy stay None until classifier
    predictions are folded in (see final_accuracy()).
    """

    predicted_alarms: int
    regression_tp: int
    regression_fp: int
    fpaf_fraction: Optional[float]
    classifier_correct: Optional[int] = None
    final_accuracy: Optional[float] = None

    def __post_init__(self):
        if self.regression_tp + self.regression_fp != self.predicted_alarms:
            raise UsageError("regression tp + fp must equal predicted alarms")
        if self.classifier_correct is not None and self.classifier_correct > self.regression_tp:
            raise UsageError("classifier_correct cannot exceed regression true positives")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PerAlarmReport:
    """Per-tag forecast results; rows are sorted by tag."""

    rows: List[Dict] = field(default_factory=list)
    frequency: Dict[int, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(row['occurrences'] for row in self.rows)

    def to_list(self) -> List[Dict]:
        return [dict(row) for row in self.rows]


def _binary_vector(name: str, values: Sequence[int]) -> np.ndarray:
    array = np.asarray(values, dtype=np.int64).reshape(-1)
    if np.any((array != 0) & (array != 1)):
        raise UsageError(f"{name} must contain only 0/1 values")
    return array


def _same_length(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if len(a) != len(b):
        raise UsageError(f"{what}: length mismatch ({len(a)} vs {len(b)})")


def binary_contingency(pred: Sequence[int], truth: Sequence[int]) -> ContingencyCounts:
    """
    Count TP / FP / FN / TN elementwise.

    Raises:
        UsageError: Length mismatch or non-binary values
    """
    pred = _binary_vector('pred', pred)
    truth = _binary_vector('truth', truth)
    _same_length(pred, truth, 'binary_contingency')
    return ContingencyCounts(
        tp=int(np.sum((pred == 1) & (truth == 1))),
        fp=int(np.sum((pred == 1) & (truth == 0))),
        fn=int(np.sum((pred == 0) & (truth == 1))),
        tn=int(np.sum((pred == 0) & (truth == 0))),
    )


def metrics(c: ContingencyCounts) -> MetricReport:
    """
    accuracy = (tp+tn)/total, precision = tp/(tp+fp), recall = tp/(tp+fn),
    f1 = 2tp/(2tp+fp+fn); zero denominators give None.
    """
    return MetricReport(
        accuracy=_ratio(c.tp + c.tn, c.total),
        precision=_ratio(c.tp, c.tp + c.fp),
        recall=_ratio(c.tp, c.tp + c.fn),
        f1=_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
    )


def _tag_vector(name: str, values: Sequence[int]) -> np.ndarray:
    array = np.asarray(values, dtype=np.int64).reshape(-1)
    if np.any(array < 1):
        raise UsageError(f"{name}: alarm tags must be >= 1")
    return array


def multiclass_micro(preds: Sequence[int], truth: Sequence[int]) -> MetricReport:
    """
    Micro-averaged (pooled one-vs-rest) metrics over alarm tags.

    For single-label data precision = recall = f1 = fraction correct.
    An empty input gives an all-None report.
    """
    preds = _tag_vector('preds', preds)
    truth = _tag_vector('truth', truth)
    _same_length(preds, truth, 'multiclass_micro')
    if len(truth) == 0:
        return MetricReport()

    labels = np.union1d(preds, truth)
    precision, recall, f1, _ = precision_recall_fscore_support(
        truth, preds, labels=labels, average='micro', zero_division=0
    )
    return MetricReport(
        accuracy=float(accuracy_score(truth, preds)),
        precision=float(precision),
        recall=float(recall),
        f1=float(f1),
    )


def fpaf(regression_pred: Sequence[int], truth: Sequence[int]) -> FpafReport:
    """
    Fraction of regression-flagged windows with no true alarm.

    Example:
        7 flagged windows, 1 without an alarm -> fpaf_fraction = 1/7

    Zero flagged windows give fpaf_fraction None.
    """
    c = binary_contingency(regression_pred, truth)
    predicted = c.tp + c.fp
    if predicted == 0:
        logger.warning("No predicted alarms; FPAF fraction undefined")
    return FpafReport(
        predicted_alarms=predicted,
        regression_tp=c.tp,
        regression_fp=c.fp,
        fpaf_fraction=_ratio(c.fp, predicted),
    )


def final_accuracy(
    regression_pred: Sequence[int],
    truth_binary: Sequence[int],
    classifier_preds_on_flagged: Sequence[int],
    truth_tags_on_flagged: Sequence[int]
) -> FpafReport:
    """
    FPAF-corrected final accuracy.

    classifier_correct counts flagged windows that carry a true alarm and got
    the right tag; final_accuracy = classifier_correct / predicted_alarms.
    Flagged windows without an alarm (tag 0) can never count as correct.

    Example:
        7 flagged, 6 true alarms, 5 of them tagged correctly -> 5/7

    Raises:
        UsageError: Classifier predictions do not cover exactly the flagged windows
    """
    pred = _binary_vector('regression_pred', regression_pred)
    truth = _binary_vector('truth_binary', truth_binary)
    _same_length(pred, truth, 'final_accuracy')

    tags_pred = np.asarray(classifier_preds_on_flagged, dtype=np.int64).reshape(-1)
    tags_true = np.asarray(truth_tags_on_flagged, dtype=np.int64).reshape(-1)
    flagged = np.flatnonzero(pred == 1)
    if len(tags_pred) != len(flagged) or len(tags_true) != len(flagged):
        raise UsageError(
            f"Classifier output must cover the {len(flagged)} flagged windows, "
            f"got {len(tags_pred)} predictions and {len(tags_true)} true tags"
        )
    if np.any((tags_true > 0) != (truth[flagged] == 1)):
        raise UsageError("True tags on flagged windows disagree with the binary truth")

    report = fpaf(pred, truth)
    correct = int(np.sum((tags_true > 0) & (tags_pred == tags_true)))
    report.classifier_correct = correct
    report.final_accuracy = _ratio(correct, report.predicted_alarms)
    return report


def per_alarm_breakdown(final_tags: Sequence[int], truth_tags: Sequence[int]) -> PerAlarmReport:
    """
    Per-tag forecast-and-classify accuracy.

    Args:
        final_tags: Pipeline output per window (0 = not forecast, else the assigned tag)
        truth_tags: True tag per window (0 = no alarm)

    Tags that never occur in truth are omitted; occurring tags that were never
    predicted correctly appear with accuracy 0.
    """
    final = np.asarray(final_tags, dtype=np.int64).reshape(-1)
    truth = np.asarray(truth_tags, dtype=np.int64).reshape(-1)
    _same_length(final, truth, 'per_alarm_breakdown')

    rows = []
    frequency = {}
    for tag in np.unique(truth[truth > 0]):
        occurs = truth == tag
        occurrences = int(occurs.sum())
        correct = int(np.sum(occurs & (final == tag)))
        frequency[int(tag)] = occurrences
        rows.append({
            'tag': int(tag),
            'occurrences': occurrences,
            'forecast': int(np.sum(occurs & (final > 0))),
            'correct': correct,
            'accuracy': correct / occurrences,
        })
    return PerAlarmReport(rows, frequency)


def confusion_matrix(preds: Sequence[int], truth: Sequence[int], K: int) -> np.ndarray:
    """
    K x K counts; entry [a-1, b-1] counts truth tag a predicted as tag b.

    Raises:
        UsageError: Tag outside 1..K or length mismatch
    """
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    truth = np.asarray(truth, dtype=np.int64).reshape(-1)
    _same_length(preds, truth, 'confusion_matrix')
    if K < 1:
        raise UsageError(f"K must be at least 1, got {K}")
    for name, values in (('preds', preds), ('truth', truth)):
        if np.any((values < 1) | (values > K)):
            raise UsageError(f"{name}: tags must be in 1..{K}")
    if len(truth) == 0:
        return np.zeros((K, K), dtype=np.int64)
    return sk_confusion_matrix(truth, preds, labels=np.arange(1, K + 1)).astype(np.int64)


def model_contingency(
    regression_pred: Sequence[int],
    truth_tags: Sequence[int],
    model_preds_on_flagged: Sequence[int]
) -> ContingencyCounts:
    """
    Two-stage contingency for one classifier.

    tp = flagged and correctly tagged; fp = flagged but not correct (no alarm
    or wrong tag); fn = true alarm not flagged; tn = neither.
    """
    pred = _binary_vector('regression_pred', regression_pred)
    truth = np.asarray(truth_tags, dtype=np.int64).reshape(-1)
    _same_length(pred, truth, 'model_contingency')
    tags = np.asarray(model_preds_on_flagged, dtype=np.int64).reshape(-1)
    flagged = np.flatnonzero(pred == 1)
    if len(tags) != len(flagged):
        raise UsageError(f"Expected {len(flagged)} classifier predictions, got {len(tags)}")

    tp = int(np.sum((truth[flagged] > 0) & (tags == truth[flagged])))
    fn = int(np.sum((pred == 0) & (truth > 0)))
    tn = int(np.sum((pred == 0) & (truth == 0)))
    return ContingencyCounts(tp=tp, fp=len(flagged) - tp, fn=fn, tn=tn)


def contingency_fractions(per_turbine: Sequence[Mapping[str, ContingencyCounts]]) -> Dict[str, Dict[str, Optional[float]]]:
    """
    Per-model FP / FN / TP fractions averaged over turbines.

    Each turbine's counts are normalized by its flagged + missed alarm total
    (fp + fn + tp) before averaging; turbines with a zero total are skipped.

    Raises:
        UsageError: Empty input
    """
    if not per_turbine:
        raise UsageError("contingency_fractions needs at least one turbine report")

    models = sorted({name for counts in per_turbine for name in counts})
    result = {}
    for name in models:
        fractions = []
        for counts in per_turbine:
            c = counts.get(name)
            if c is None:
                continue
            basis = c.fp + c.fn + c.tp
            if basis == 0:
                continue
            fractions.append((c.fp / basis, c.fn / basis, c.tp / basis))
        if fractions:
            mean = np.mean(np.array(fractions), axis=0)
            result[name] = {'FP': float(mean[0]), 'FN': float(mean[1]), 'TP': float(mean[2])}
        else:
            result[name] = {'FP': None, 'FN': None, 'TP': None}
    return result


@dataclass
class TurbineReport:
    """Everything evaluated for one test turbine at one FW offset."""

    turbine: str
    fw: int
    K: int
    regression_counts: ContingencyCounts
    regression_metrics: MetricReport
    classifier_metrics: Dict[str, MetricReport]
    standalone_metrics: Dict[str, MetricReport]
    fpaf: FpafReport
    chosen_model: str
    pre_fpaf_score: Optional[float]
    per_alarm: PerAlarmReport
    confusion: np.ndarray
    contingency: Dict[str, ContingencyCounts]
    confusion_by_model: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def final_accuracy(self) -> Optional[float]:
        return self.fpaf.final_accuracy

    def to_dict(self) -> dict:
        return {
            'turbine': self.turbine,
            'fw': self.fw,
            'regression': {
                'counts': self.regression_counts.to_dict(),
                'metrics': self.regression_metrics.to_dict(),
                'final': self.regression_metrics.recall,
            },
            'classifiers': {name: m.to_dict() for name, m in sorted(self.classifier_metrics.items())},
            'standalone': {name: m.to_dict() for name, m in sorted(self.standalone_metrics.items())},
            'fpaf': self.fpaf.to_dict(),
            'final_accuracy': self.final_accuracy,
            'pre_fpaf_score': self.pre_fpaf_score,
            'chosen_model': self.chosen_model,
            'per_alarm': self.per_alarm.to_list(),
            'confusion': {'K': self.K, 'counts': self.confusion.tolist()},
            'confusion_by_model': {name: c.tolist() for name, c in sorted(self.confusion_by_model.items())},
            'contingency': {name: c.to_dict() for name, c in sorted(self.contingency.items())},
        }


def build_turbine_report(
    turbine: str,
    fw: int,
    K: int,
    truth_tags: Sequence[int],
    regression_pred: Sequence[int],
    flagged_preds: Dict[str, Sequence[int]],
    standalone_preds: Optional[Dict[str, Sequence[int]]] = None
) -> TurbineReport:
    """
    Assemble one turbine's report.

    Args:
        turbine (str): Turbine id
        fw (int): Forecast offset
        K (int): Number of alarm tags
        truth_tags: y2 of every test window (0 = no alarm)
        regression_pred: Binary LSTM forecast per window
        flagged_preds: Classifier name -> tags predicted on the flagged windows
        standalone_preds: Classifier name -> tags predicted on every true-alarm window

    Classifier recall (and the bagged choice) is measured on flagged windows
    that carry a true alarm; the chosen model's output on all flagged windows
    gives the final accuracy.
    """
    from classify import bagged_select

    truth_tags = np.asarray(truth_tags, dtype=np.int64).reshape(-1)
    truth_binary = (truth_tags > 0).astype(np.int64)
    pred = _binary_vector('regression_pred', regression_pred)
    _same_length(pred, truth_tags, turbine)

    counts = binary_contingency(pred, truth_binary)
    flagged = np.flatnonzero(pred == 1)
    flagged_truth = truth_tags[flagged]
    true_on_flagged = flagged_truth > 0

    preds = {name: np.asarray(p, dtype=np.int64).reshape(-1) for name, p in flagged_preds.items()}
    verdict = bagged_select({name: p[true_on_flagged] for name, p in preds.items()}, flagged_truth[true_on_flagged])
    chosen = preds[verdict.chosen_model]

    fpaf_report = final_accuracy(pred, truth_binary, chosen, flagged_truth)

    final_tags = np.zeros(len(truth_tags), dtype=np.int64)
    final_tags[flagged] = chosen

    classifier_metrics = {
        name: multiclass_micro(p[true_on_flagged], flagged_truth[true_on_flagged]) for name, p in preds.items()
    }

    standalone = {}
    if standalone_preds is not None:
        alarm_truth = truth_tags[truth_tags > 0]
        standalone = {name: multiclass_micro(p, alarm_truth) for name, p in standalone_preds.items()}

    confusion_by_model = {}
    for name, p in preds.items():
        valid = true_on_flagged & (p >= 1) & (p <= K)
        confusion_by_model[name] = confusion_matrix(p[valid], flagged_truth[valid], K)

    report = TurbineReport(
        turbine=turbine,
        fw=fw,
        K=K,
        regression_counts=counts,
        regression_metrics=metrics(counts),
        classifier_metrics=classifier_metrics,
        standalone_metrics=standalone,
        fpaf=fpaf_report,
        chosen_model=verdict.chosen_model,
        pre_fpaf_score=verdict.recalls[verdict.chosen_model],
        per_alarm=per_alarm_breakdown(final_tags, truth_tags),
        confusion=confusion_by_model[verdict.chosen_model],
        contingency={name: model_contingency(pred, truth_tags, p) for name, p in preds.items()},
        confusion_by_model=confusion_by_model,
    )
    logger.info(
        f"{turbine} FW{fw}: regression recall {report.regression_metrics.recall}, "
        f"FPAF {fpaf_report.fpaf_fraction}, final accuracy {fpaf_report.final_accuracy} ({verdict.chosen_model})"
    )
    return report


def summary_table(reports: Sequence[TurbineReport]) -> pd.DataFrame:
    """
    Final accuracy grid: rows FW<f>, columns test turbines (sorted) + Average.

    Average is the mean of the defined values in the row (None if there are none).
    """
    if not reports:
        raise UsageError("summary_table needs at least one report")

    turbines = sorted({r.turbine for r in reports})
    fws = sorted({r.fw for r in reports})
    table = pd.DataFrame(index=[f"FW{f}" for f in fws], columns=turbines + ['Average'], dtype=object)
    table.index.name = 'FW'

    for r in reports:
        table.loc[f"FW{r.fw}", r.turbine] = r.final_accuracy
    for f in fws:
        row = [v for v in table.loc[f"FW{f}", turbines] if v is not None and not pd.isna(v)]
        table.loc[f"FW{f}", 'Average'] = float(np.mean(row)) if row else None
    return table


def contingency_table(reports: Sequence[TurbineReport]) -> pd.DataFrame:
    """contingency_fractions per FW as a long table (fw, model, FP, FN, TP)."""
    rows = []
    for f in sorted({r.fw for r in reports}):
        fractions = contingency_fractions([r.contingency for r in reports if r.fw == f])
        for name, values in fractions.items():
            rows.append({'fw': f, 'model': name, **values})
    return pd.DataFrame(rows, columns=['fw', 'model', 'FP', 'FN', 'TP'])


def report_to_csv(report: TurbineReport, path: str) -> str:
    """Flatten a report to section,model,metric,value rows."""
    rows = []
    payload = report.to_dict()

    for metric, value in payload['regression']['counts'].items():
        rows.append(('regression', 'LSTM', metric, value))
    for metric, value in payload['regression']['metrics'].items():
        rows.append(('regression', 'LSTM', metric, value))
    for section in ('classifiers', 'standalone'):
        for name, values in payload[section].items():
            for metric, value in values.items():
                rows.append((section, name, metric, value))
    for metric, value in payload['fpaf'].items():
        rows.append(('fpaf', payload['chosen_model'], metric, value))
    rows.append(('final', payload['chosen_model'], 'pre_fpaf_score', payload['pre_fpaf_score']))
    rows.append(('final', payload['chosen_model'], 'final_accuracy', payload['final_accuracy']))
    for row in payload['per_alarm']:
        for metric in ('occurrences', 'forecast', 'correct', 'accuracy'):
            rows.append(('per_alarm', f"tag{row['tag']}", metric, row[metric]))
    for name, counts in payload['contingency'].items():
        for metric, value in counts.items():
            rows.append(('contingency', name, metric, value))
    for name, matrix in payload['confusion_by_model'].items():
        for a, row in enumerate(matrix, start=1):
            for b, value in enumerate(row, start=1):
                rows.append(('confusion', name, f"tag{a}_as_tag{b}", value))

    frame = pd.DataFrame(rows, columns=['section', 'model', 'metric', 'value'])
    frame.to_csv(path, index=False, na_rep='', lineterminator='\n')
    return path
