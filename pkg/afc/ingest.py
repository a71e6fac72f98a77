"""
Ingest module for the AFC pipeline.

This module turns raw turbine exports into a single time-indexed dataset:
- Parsing SCADA tables (timestamp + parameter columns, empty cell = missing)
- Parsing alarm logs (start_time, duration_s, code, description, category)
- Building the alarm codebook (raw codes re-tagged 1..K in ascending order)
- Merging alarm events onto the 10-minute SCADA rows as the binary alarm
  identifier (y1) and the alarm tag column (y2)

Row t covers the half-open interval [timestamps[t], timestamps[t] + 600 s).
An event covers [start, start + duration); a zero-duration event covers the
single row whose interval contains its start.

Author: AFC Development Team
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from errors import DataError, ParseError, UsageError

logger = logging.getLogger(__name__)

ROW_SECONDS = 600
ALARM_COLUMNS = ['start_time', 'duration_s', 'code', 'description', 'category']


@dataclass
class ScadaTable:
    """One turbine's SCADA export (N rows x rho parameters)."""

    turbine_id: str
    timestamps: np.ndarray  # int64 epoch seconds, strictly increasing
    param_ids: List[str]
    values: np.ndarray  # float64, NaN = missing

    def __post_init__(self):
        if self.values.shape != (len(self.timestamps), len(self.param_ids)):
            raise DataError(
                f"{self.turbine_id}: values shape {self.values.shape} does not match "
                f"{len(self.timestamps)} timestamps x {len(self.param_ids)} parameters"
            )
        if len(self.timestamps) > 1 and np.any(np.diff(self.timestamps) <= 0):
            raise DataError(f"{self.turbine_id}: timestamps must be strictly increasing")

    @property
    def n_rows(self) -> int:
        return len(self.timestamps)


@dataclass
class AlarmEvent:
    """A single alarm log entry."""

    start_time: int
    duration: float
    raw_code: int
    description: str = ""
    category: str = ""

    def __post_init__(self):
        if self.duration < 0:
            raise DataError(f"Alarm {self.raw_code} at {self.start_time} has negative duration {self.duration}")
        if self.raw_code < 0:
            raise DataError(f"Alarm code must be non-negative, got {self.raw_code}")


@dataclass
class AlarmCodebook:
    """Bijection raw alarm code -> tag in 1..K, ascending with the raw code."""

    mapping: Dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        self._reverse = {tag: code for code, tag in self.mapping.items()}

    @property
    def K(self) -> int:
        return len(self.mapping)

    def tag(self, raw_code: int) -> int:
        try:
            return self.mapping[int(raw_code)]
        except KeyError:
            raise DataError(f"Alarm code {raw_code} is not in the codebook")

    def untag(self, tag: int) -> int:
        try:
            return self._reverse[int(tag)]
        except KeyError:
            raise DataError(f"Tag {tag} is not in the codebook (K={self.K})")

    def to_dict(self) -> dict:
        return {'K': self.K, 'mapping': {str(code): tag for code, tag in sorted(self.mapping.items())}}

    @classmethod
    def from_dict(cls, payload: dict) -> 'AlarmCodebook':
        return cls({int(code): int(tag) for code, tag in payload['mapping'].items()})


@dataclass
class MergedDataset:
    """
    SCADA rows plus alarm targets for one turbine.

    y1[t] = 1 when an alarm is active in row t; y2[t] is its tag (0 = none).
    """

    turbine_id: str
    timestamps: np.ndarray
    param_ids: List[str]
    values: np.ndarray
    y1: np.ndarray
    y2: np.ndarray

    def __post_init__(self):
        n = len(self.timestamps)
        if len(self.y1) != n or len(self.y2) != n:
            raise DataError(f"{self.turbine_id}: y1/y2 length must equal the row count {n}")
        if self.values.shape != (n, len(self.param_ids)):
            raise DataError(f"{self.turbine_id}: values shape {self.values.shape} does not match columns")
        if np.any((self.y2 > 0) != (self.y1 == 1)):
            raise DataError(f"{self.turbine_id}: y1 and y2 disagree on alarm rows")

    @property
    def n_rows(self) -> int:
        return len(self.timestamps)

    def with_values(self, values: np.ndarray, param_ids: Optional[List[str]] = None) -> 'MergedDataset':
        """Copy with new parameter values (targets and timestamps untouched)."""
        return replace(
            self,
            values=values,
            param_ids=list(self.param_ids if param_ids is None else param_ids),
            y1=self.y1.copy(),
            y2=self.y2.copy(),
        )


def _parse_timestamp(raw: str) -> int:
    """Epoch seconds (integer or float text) or ISO-8601; naive ISO is UTC."""
    text = raw.strip()
    try:
        seconds = float(text)
    except ValueError:
        pass
    else:
        if not np.isfinite(seconds) or abs(seconds) >= 2 ** 62:
            raise ValueError(f"timestamp out of range {text}")
        return int(round(seconds))
    stamp = pd.Timestamp(text)
    if pd.isna(stamp):
        raise ValueError("empty timestamp")
    if stamp.tzinfo is None:
        stamp = stamp.tz_localize('UTC')
    return int(stamp.timestamp())


def parse_scada(path: str, turbine_id: Optional[str] = None) -> ScadaTable:
    """
    Parse a SCADA CSV export.

    Expected layout: header `timestamp,<param>...`, one row per 10-minute log,
    timestamps as ISO-8601 or epoch seconds, empty cells for missing values.

    Args:
        path (str): CSV file path
        turbine_id (str): Identifier to attach (defaults to the file stem)

    Returns:
        ScadaTable: Rows sorted by timestamp, empty cells as NaN

    Raises:
        UsageError: If the file does not exist
        ParseError: Malformed timestamp or non-numeric cell (names row/column)
        DataError: Duplicate timestamps or zero data rows

    Example:
        >>> table = parse_scada('data/scada_WT01.csv', 'WT01')
        >>> table.values.shape
        (5000, 6)
    """
    if turbine_id is None:
        turbine_id = Path(path).stem

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError:
        raise UsageError(f"SCADA file not found: {path}")
    except pd.errors.EmptyDataError:
        raise DataError(f"{path}: file is empty")
    except pd.errors.ParserError as e:
        raise ParseError(f"malformed CSV: {e}", path=path)

    if frame.shape[1] == 0 or frame.columns[0].strip().lower() != 'timestamp':
        raise ParseError("first column must be 'timestamp'", path=path)
    if len(frame) == 0:
        raise DataError(f"{path}: no data rows")

    param_ids = [str(c).strip() for c in frame.columns[1:]]
    if len(set(param_ids)) != len(param_ids):
        raise ParseError("duplicate parameter column names", path=path)

    timestamps = np.empty(len(frame), dtype=np.int64)
    for i, raw in enumerate(frame.iloc[:, 0]):
        try:
            timestamps[i] = _parse_timestamp(raw)
        except (ValueError, TypeError, OverflowError):
            raise ParseError(f"malformed timestamp '{raw}'", path=path, row=i + 1, column='timestamp')

    values = np.full((len(frame), len(param_ids)), np.nan)
    for j, column in enumerate(frame.columns[1:]):
        cells = frame[column].str.strip()
        numeric = pd.to_numeric(cells.where(cells != ''), errors='coerce')
        bad = numeric.isna() & (cells != '')
        if bad.any():
            i = int(np.flatnonzero(bad.to_numpy())[0])
            raise ParseError(
                f"non-numeric value '{cells.iloc[i]}'", path=path, row=i + 1, column=param_ids[j]
            )
        values[:, j] = numeric.to_numpy(dtype=float)

    order = np.argsort(timestamps, kind='stable')
    timestamps = timestamps[order]
    values = values[order]

    duplicates = timestamps[1:][np.diff(timestamps) == 0]
    if len(duplicates):
        raise DataError(f"{path}: duplicate timestamp {int(duplicates[0])}")

    logger.info(f"Parsed SCADA {turbine_id}: {len(timestamps)} rows x {len(param_ids)} parameters")
    return ScadaTable(turbine_id, timestamps, param_ids, values)


def parse_alarm_log(path: str) -> List[AlarmEvent]:
    """
    Parse an alarm log CSV (`start_time,duration_s,code,description,category`).

    Returns:
        list: AlarmEvents sorted by start_time (stable for equal starts)

    Raises:
        UsageError: If the file does not exist
        ParseError: Missing columns or malformed row
        DataError: Negative duration
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError:
        raise UsageError(f"Alarm log not found: {path}")
    except pd.errors.EmptyDataError:
        raise ParseError("file is empty (header required)", path=path)
    except pd.errors.ParserError as e:
        raise ParseError(f"malformed CSV: {e}", path=path)

    frame.columns = [str(c).strip().lower() for c in frame.columns]
    missing = [c for c in ALARM_COLUMNS if c not in frame.columns]
    if missing:
        raise ParseError(f"missing columns: {', '.join(missing)}", path=path)

    events = []
    for i, row in enumerate(frame.itertuples(index=False), 1):
        record = row._asdict()
        try:
            start = _parse_timestamp(record['start_time'])
        except (ValueError, TypeError, OverflowError):
            raise ParseError(f"malformed start_time '{record['start_time']}'", path=path, row=i, column='start_time')
        try:
            duration = float(record['duration_s'])
            if not np.isfinite(duration):
                raise ValueError(duration)
        except ValueError:
            raise ParseError(f"malformed duration '{record['duration_s']}'", path=path, row=i, column='duration_s')
        try:
            code = int(str(record['code']).strip())
        except ValueError:
            raise ParseError(f"malformed code '{record['code']}'", path=path, row=i, column='code')

        if duration < 0:
            raise DataError(f"{path}: row {i}: negative duration {duration}")

        events.append(AlarmEvent(
            start_time=start,
            duration=duration,
            raw_code=code,
            description=str(record['description']),
            category=str(record['category']),
        ))

    events.sort(key=lambda e: e.start_time)
    logger.info(f"Parsed {len(events)} alarm events from {path}")
    return events


def build_codebook(events: Sequence[AlarmEvent]) -> AlarmCodebook:
    """
    Re-tag raw alarm codes as 1..K in ascending numeric order.

    Raw code 0 (normal operation) is excluded.

    Args:
        events (list): Alarm events pooled from all turbines

    Returns:
        AlarmCodebook: e.g. codes {901, 12, 507} -> {12: 1, 507: 2, 901: 3}

    Raises:
        DataError: If there is no non-zero code
    """
    codes = sorted({int(e.raw_code) for e in events if e.raw_code != 0})
    if not codes:
        raise DataError("No non-zero alarm codes found; cannot build a codebook")
    codebook = AlarmCodebook({code: tag for tag, code in enumerate(codes, 1)})
    logger.info(f"Built alarm codebook with K={codebook.K} tags")
    return codebook


def merge_alarms(
    scada: Union[ScadaTable, MergedDataset],
    events: Sequence[AlarmEvent],
    codebook: AlarmCodebook
) -> MergedDataset:
    """
    Mark SCADA rows covered by alarm events.

    A row is marked when its [t, t + 600 s) interval intersects an event's
    [start, start + duration). When several events cover one row, the event
    with the earliest start wins and equal starts go to the lowest tag.
    Raw code 0 events are ignored.

    Passing an already merged dataset keeps its marks; new events only fill
    unmarked rows, so merging again with no events changes nothing.

    Args:
        scada (ScadaTable | MergedDataset): Rows to mark
        events (list): Alarm events of this turbine
        codebook (AlarmCodebook): Shared codebook

    Returns:
        MergedDataset: With y1/y2 filled

    Raises:
        DataError: If an event code is missing from the codebook
    """
    n = scada.n_rows
    timestamps = np.asarray(scada.timestamps, dtype=np.int64)

    if isinstance(scada, MergedDataset):
        y2 = scada.y2.astype(np.int64).copy()
    else:
        y2 = np.zeros(n, dtype=np.int64)

    tagged = []
    for event in events:
        if event.raw_code == 0:
            continue
        tagged.append((event.start_time, codebook.tag(event.raw_code), event))
    tagged.sort(key=lambda item: (item[0], item[1]))

    for start, tag, event in tagged:
        if event.duration == 0:
            # Row whose interval contains the start instant
            t = np.searchsorted(timestamps, start, side='right') - 1
            if t >= 0 and start < timestamps[t] + ROW_SECONDS:
                rows = np.array([t])
            else:
                rows = np.array([], dtype=np.int64)
        else:
            end = start + event.duration
            # timestamps[t] < end and timestamps[t] + 600 > start
            lo = np.searchsorted(timestamps, start - ROW_SECONDS, side='right')
            hi = np.searchsorted(timestamps, end, side='left')
            rows = np.arange(lo, hi)
        if len(rows):
            free = rows[y2[rows] == 0]
            y2[free] = tag

    y1 = (y2 > 0).astype(np.int64)
    logger.info(f"Merged alarms for {scada.turbine_id}: {int(y1.sum())} of {n} rows marked")

    return MergedDataset(
        turbine_id=scada.turbine_id,
        timestamps=timestamps.copy(),
        param_ids=list(scada.param_ids),
        values=np.array(scada.values, dtype=float, copy=True),
        y1=y1,
        y2=y2,
    )


def alarm_frequency(dataset: MergedDataset) -> Dict[int, int]:
    """Occurrences (marked rows) per tag, ascending by tag."""
    tags, counts = np.unique(dataset.y2[dataset.y2 > 0], return_counts=True)
    return {int(t): int(c) for t, c in zip(tags, counts)}


def write_scada(table: Union[ScadaTable, MergedDataset], path: str) -> str:
    """Write a SCADA CSV that parse_scada reads back (epoch-second timestamps)."""
    frame = pd.DataFrame(table.values, columns=table.param_ids)
    frame.insert(0, 'timestamp', np.asarray(table.timestamps, dtype=np.int64))
    frame.to_csv(path, index=False, na_rep='', float_format='%.17g')
    return path


def write_alarm_log(events: Sequence[AlarmEvent], path: str) -> str:
    """Write an alarm log CSV that parse_alarm_log reads back."""
    frame = pd.DataFrame(
        [(e.start_time, e.duration, e.raw_code, e.description, e.category) for e in events],
        columns=ALARM_COLUMNS,
    )
    frame.to_csv(path, index=False)
    return path
