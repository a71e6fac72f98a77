"""
Preprocess module for the AFC pipeline.

Data refinement before windowing:
- NaN-based parameter reduction on a reference turbine (default 20% threshold),
  applied identically to every turbine so all datasets share one column set
- Residual NaN imputation (forward fill, backward fill, then zero)
- Per-parameter min-max scaling fitted on training turbines only

RetentionMask and ScalerParams round-trip through JSON so the stages can be
rerun from disk.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
import pandas as pd

from errors import DataError, UsageError
from ingest import MergedDataset

logger = logging.getLogger(__name__)

DEFAULT_NAN_THRESHOLD = 0.20


@dataclass
class RetentionMask:
    """Parameters kept after NaN-based reduction of the reference turbine."""

    reference_turbine: str
    threshold: float
    retained: List[str] = field(default_factory=list)

    @property
    def M(self) -> int:
        return len(self.retained)

    def to_dict(self) -> dict:
        return {
            'reference_turbine': self.reference_turbine,
            'threshold': self.threshold,
            'retained': list(self.retained),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> 'RetentionMask':
        return cls(payload['reference_turbine'], float(payload['threshold']), list(payload['retained']))


@dataclass
class ScalerParams:
    """Per-parameter minimum and maximum used by min-max scaling."""

    param_ids: List[str]
    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        self.minimum = np.asarray(self.minimum, dtype=float)
        self.maximum = np.asarray(self.maximum, dtype=float)
        if len(self.minimum) != len(self.param_ids) or len(self.maximum) != len(self.param_ids):
            raise DataError("Scaler min/max length must match the parameter count")
        if np.any(self.minimum > self.maximum):
            raise DataError("Scaler minimum exceeds maximum")

    def to_dict(self) -> dict:
        return {
            'param_ids': list(self.param_ids),
            'min': [float(v) for v in self.minimum],
            'max': [float(v) for v in self.maximum],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> 'ScalerParams':
        return cls(list(payload['param_ids']), np.array(payload['min']), np.array(payload['max']))


def nan_fractions(dataset: MergedDataset) -> np.ndarray:
    """Fraction of NaN cells per parameter column."""
    if dataset.n_rows == 0:
        raise DataError(f"{dataset.turbine_id}: dataset has no rows")
    return np.isnan(dataset.values).mean(axis=0)


def compute_retention(reference: MergedDataset, threshold: float = DEFAULT_NAN_THRESHOLD) -> RetentionMask:
    """
    Keep parameters whose NaN fraction in the reference turbine is <= threshold.

    Args:
        reference (MergedDataset): Reference turbine (the one retaining most parameters)
        threshold (float): Allowed NaN fraction in [0, 1]

    Returns:
        RetentionMask: Retained ids in original column order

    Raises:
        UsageError: Threshold outside [0, 1]
        DataError: Empty reference or no parameter survives
    """
    if not 0.0 <= threshold <= 1.0:
        raise UsageError(f"NaN threshold must be between 0 and 1, got {threshold}")

    fractions = nan_fractions(reference)
    retained = [pid for pid, frac in zip(reference.param_ids, fractions) if frac <= threshold]

    if not retained:
        raise DataError(
            f"No parameter of reference turbine {reference.turbine_id} has <= {threshold:.0%} NaN values"
        )

    logger.info(
        f"NaN reduction on {reference.turbine_id}: {len(reference.param_ids)} -> {len(retained)} "
        f"parameters (threshold {threshold:.0%})"
    )
    return RetentionMask(reference.turbine_id, threshold, retained)


def apply_retention(dataset: MergedDataset, mask: RetentionMask) -> MergedDataset:
    """
    Reduce a dataset to exactly the retained parameters, in mask order.

    Raises:
        DataError: If a retained parameter is absent from this turbine
    """
    positions = {pid: j for j, pid in enumerate(dataset.param_ids)}
    missing = [pid for pid in mask.retained if pid not in positions]
    if missing:
        raise DataError(
            f"{dataset.turbine_id}: retained parameter(s) missing: {', '.join(missing[:5])}"
        )

    columns = [positions[pid] for pid in mask.retained]
    return dataset.with_values(dataset.values[:, columns].copy(), mask.retained)


def impute(dataset: MergedDataset) -> MergedDataset:
    """
    Fill residual NaNs column by column.

    Forward fill from the last seen value, backward fill leading gaps, and
    zero for columns with no value at all. Non-NaN values are never changed.

    Example:
        [1, NaN, 3] -> [1, 1, 3];  [NaN, 5] -> [5, 5];  [NaN, NaN] -> [0, 0]
    """
    frame = pd.DataFrame(dataset.values)
    filled = frame.ffill().bfill().fillna(0.0)
    return dataset.with_values(filled.to_numpy(dtype=float))


def fit_scaler(training_datasets: Sequence[MergedDataset]) -> ScalerParams:
    """
    Global per-parameter min/max over all training rows.

    Raises:
        DataError: Empty input, NaNs present, or mismatched column sets
    """
    if not training_datasets:
        raise DataError("fit_scaler needs at least one training dataset")

    param_ids = list(training_datasets[0].param_ids)
    for dataset in training_datasets:
        if list(dataset.param_ids) != param_ids:
            raise DataError(f"{dataset.turbine_id}: column set differs from {training_datasets[0].turbine_id}")
        if np.isnan(dataset.values).any():
            raise DataError(f"{dataset.turbine_id}: impute before fitting the scaler")
        if dataset.n_rows == 0:
            raise DataError(f"{dataset.turbine_id}: dataset has no rows")

    stacked = np.vstack([d.values for d in training_datasets])
    return ScalerParams(param_ids, stacked.min(axis=0), stacked.max(axis=0))


def _check_columns(dataset: MergedDataset, scaler: ScalerParams) -> None:
    if list(dataset.param_ids) != list(scaler.param_ids):
        raise DataError(f"{dataset.turbine_id}: columns do not match the scaler")


def apply_scaler(dataset: MergedDataset, scaler: ScalerParams) -> MergedDataset:
    """
    Min-max scale every parameter: (x - min) / (max - min).

    Constant columns (min == max) map to 0; values outside the fitted range
    are clamped to [0, 1].
    """
    _check_columns(dataset, scaler)

    span = scaler.maximum - scaler.minimum
    constant = span == 0
    safe_span = np.where(constant, 1.0, span)

    scaled = (dataset.values - scaler.minimum) / safe_span
    scaled[:, constant] = 0.0
    scaled = np.clip(scaled, 0.0, 1.0)
    return dataset.with_values(scaled)


def inverse_scaler(dataset: MergedDataset, scaler: ScalerParams) -> MergedDataset:
    """Map scaled values back to engineering units (constant columns return min)."""
    _check_columns(dataset, scaler)
    span = scaler.maximum - scaler.minimum
    return dataset.with_values(dataset.values * span + scaler.minimum)


def nan_statistics(datasets: Sequence[MergedDataset]) -> pd.DataFrame:
    """
    Parameter-wise NaN percentage per turbine.

    Returns:
        pd.DataFrame: Columns turbine, param_id, nan_percent (one row per cell)
    """
    rows = []
    for dataset in datasets:
        for pid, fraction in zip(dataset.param_ids, nan_fractions(dataset)):
            rows.append({
                'turbine': dataset.turbine_id,
                'param_id': pid,
                'nan_percent': round(float(fraction) * 100.0, 6),
            })
    return pd.DataFrame(rows, columns=['turbine', 'param_id', 'nan_percent'])
