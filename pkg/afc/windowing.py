"""
Sliding-window (SW) and forecasting-window (FW) construction.

Window g stacks dataset rows g .. g+L-1 (stride 1) and is paired with the
targets of row g+L-1+f, so a dataset of N rows gives P = N - L + 1 - f
windows. The FW offset f only shifts the input -> target association; y1 and
y2 always come from the same row.
"""

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from artifacts import load_arrays, save_arrays
from errors import DataError, UsageError
from ingest import MergedDataset

logger = logging.getLogger(__name__)

DEFAULT_WINDOW_LENGTH = 12  # 12 x 10 min = 2 h
MAX_FORECAST_OFFSET = 3


@dataclass(frozen=True)
class WindowSpec:
    length: int = DEFAULT_WINDOW_LENGTH
    width: int = 1
    forecast_offset: int = 1
    stride: int = 1

    def __post_init__(self):
        if self.length < 1:
            raise UsageError(f"Window length must be >= 1, got {self.length}")
        if self.width < 1:
            raise UsageError(f"Window width must be >= 1, got {self.width}")
        if not 0 <= self.forecast_offset <= MAX_FORECAST_OFFSET:
            raise UsageError(f"Forecast offset {self.forecast_offset} not supported (range 0-3)")
        if self.stride != 1:
            raise UsageError("Only stride 1 is supported")

    @property
    def size(self) -> int:
        """Flattened window length L*M."""
        return self.length * self.width


@dataclass
class WindowedSet:
    """P windows (P x L x M) with their y1/y2 targets and target row indices."""

    X: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    source_rows: np.ndarray
    spec: WindowSpec
    turbine_id: str = ""
    degenerate: bool = False

    @property
    def P(self) -> int:
        return len(self.y1)


def window_count(n_rows: int, length: int, offset: int) -> int:
    return max(n_rows - length + 1 - offset, 0)


def build_windows(dataset: MergedDataset, spec: WindowSpec) -> WindowedSet:
    """
    Build stride-1 windows and align targets f steps ahead.

    Args:
        dataset (MergedDataset): Scaled, NaN-free dataset with M = spec.width columns
        spec (WindowSpec): L, M and FW offset

    Returns:
        WindowedSet: P = N - L + 1 - f windows; P = 0 is flagged degenerate

    Raises:
        UsageError: Column count differs from spec.width
        DataError: Dataset still contains NaN

    Example:
        N=15, L=12, f=0 -> P=4, first window rows 0..11, target row 11
    """
    if dataset.values.shape[1] != spec.width:
        raise UsageError(
            f"{dataset.turbine_id}: dataset has {dataset.values.shape[1]} columns, window width is {spec.width}"
        )
    if np.isnan(dataset.values).any():
        raise DataError(f"{dataset.turbine_id}: impute NaNs before windowing")

    L, M, f = spec.length, spec.width, spec.forecast_offset
    P = window_count(dataset.n_rows, L, f)

    if P == 0:
        logger.warning(f"{dataset.turbine_id}: {dataset.n_rows} rows < L + f = {L + f}; no windows")
        return WindowedSet(
            X=np.empty((0, L, M)),
            y1=np.empty(0, dtype=np.int64),
            y2=np.empty(0, dtype=np.int64),
            source_rows=np.empty(0, dtype=np.int64),
            spec=spec,
            turbine_id=dataset.turbine_id,
            degenerate=True,
        )

    # (N-L+1, M, L) view -> (N-L+1, L, M), keep the first P windows
    views = np.lib.stride_tricks.sliding_window_view(dataset.values, L, axis=0)
    X = np.ascontiguousarray(views[:P].transpose(0, 2, 1), dtype=float)

    source_rows = np.arange(P, dtype=np.int64) + L - 1 + f
    return WindowedSet(
        X=X,
        y1=dataset.y1[source_rows].astype(np.int64),
        y2=dataset.y2[source_rows].astype(np.int64),
        source_rows=source_rows,
        spec=spec,
        turbine_id=dataset.turbine_id,
    )


def select_alarm_windows(ws: WindowedSet, predictions: Sequence[int]) -> WindowedSet:
    """
    Keep the windows predicted as alarms ('1'), in original temporal order.

    Raises:
        UsageError: predictions length differs from P
    """
    predictions = np.asarray(predictions)
    if predictions.shape != (ws.P,):
        raise UsageError(f"Expected {ws.P} predictions, got {predictions.shape[0] if predictions.ndim else 0}")

    keep = np.flatnonzero(predictions == 1)
    return WindowedSet(
        X=ws.X[keep],
        y1=ws.y1[keep],
        y2=ws.y2[keep],
        source_rows=ws.source_rows[keep],
        spec=ws.spec,
        turbine_id=ws.turbine_id,
        degenerate=len(keep) == 0,
    )


def flatten_windows(ws: WindowedSet) -> np.ndarray:
    """P x (L*M) matrix, row-major over (time step, parameter)."""
    return ws.X.reshape(ws.P, ws.spec.size)


def concat_windows(sets: Sequence[WindowedSet]) -> WindowedSet:
    """Stack several turbines' windows (all must share one spec)."""
    if not sets:
        raise UsageError("concat_windows needs at least one set")
    spec = sets[0].spec
    if any(s.spec != spec for s in sets):
        raise UsageError("All window sets must share L, M and f")
    return WindowedSet(
        X=np.concatenate([s.X for s in sets]),
        y1=np.concatenate([s.y1 for s in sets]),
        y2=np.concatenate([s.y2 for s in sets]),
        source_rows=np.concatenate([s.source_rows for s in sets]),
        spec=spec,
        turbine_id='+'.join(s.turbine_id for s in sets),
        degenerate=sum(s.P for s in sets) == 0,
    )


def save_windows(ws: WindowedSet, path: str) -> str:
    """Cache a window set (header L, M, f, P + row-major tensors)."""
    header = {
        'L': ws.spec.length,
        'M': ws.spec.width,
        'f': ws.spec.forecast_offset,
        'P': ws.P,
        'turbine_id': ws.turbine_id,
    }
    return save_arrays(path, 'windows', header, {
        'X': ws.X,
        'y1': ws.y1,
        'y2': ws.y2,
        'source_rows': ws.source_rows,
    })


def load_windows(path: str) -> WindowedSet:
    header, arrays = load_arrays(path, 'windows')
    spec = WindowSpec(length=header['L'], width=header['M'], forecast_offset=header['f'])
    X = arrays['X'].reshape(header['P'], spec.length, spec.width)
    return WindowedSet(
        X=X,
        y1=arrays['y1'],
        y2=arrays['y2'],
        source_rows=arrays['source_rows'],
        spec=spec,
        turbine_id=header['turbine_id'],
        degenerate=header['P'] == 0,
    )
