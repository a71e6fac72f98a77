"""
Synthetic multi-turbine SCADA generator with planted alarm precursors.

Each turbine gets:
- An autoregressive baseline per parameter: x[t] = ar_coef * x[t-1] + N(0, drift_std)
- Alarm rows sampled per row from the tag base rates
- For every alarm of tag c at row t and every rule (j, magnitude, lead, c):
  a one-row step of `magnitude` added to parameter j at row t - lead
- Gaussian measurement noise (noise_std) everywhere
- NaN cells injected per parameter (exact count round(fraction * N))

Alarm events are written with duration 300 s starting at the row timestamp,
so each one marks exactly its own row after merging.

Author: AFC Development Team
"""

import json
import logging
import os
from dataclasses import dataclass, field, fields
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd

from artifacts import ensure_dir, write_json
from errors import SpecError, UsageError
from ingest import ROW_SECONDS, AlarmEvent, MergedDataset, write_alarm_log, write_scada

logger = logging.getLogger(__name__)

EVENT_DURATION = 300


@dataclass(frozen=True)
class PrecursorRule:
    param: int
    magnitude: float
    lead: int
    tag: int

    def to_dict(self) -> dict:
        return {'param': self.param, 'magnitude': self.magnitude, 'lead': self.lead, 'tag': self.tag}


@dataclass
class SynthSpec:
    """Synthetic dataset recipe."""

    n_turbines: int = 5
    rows_per_turbine: int = 5000
    n_params: int = 8
    alarm_tags: Dict[int, float] = field(default_factory=lambda: {1: 0.03, 2: 0.03})
    precursor_rules: List[PrecursorRule] = field(default_factory=lambda: [
        PrecursorRule(param=0, magnitude=1.0, lead=1, tag=1),
        PrecursorRule(param=1, magnitude=1.0, lead=1, tag=2),
    ])
    noise_std: float = 0.01
    nan_injection: Dict[int, float] = field(default_factory=dict)
    seed: int = 42
    drift_std: float = 0.05
    ar_coef: float = 0.9
    start_time: str = "2020-01-01T00:00:00Z"
    raw_code_base: int = 100

    @property
    def max_lead(self) -> int:
        return max((rule.lead for rule in self.precursor_rules), default=0)

    def turbine_ids(self) -> List[str]:
        return [f"WT{n + 1:02d}" for n in range(self.n_turbines)]

    def param_ids(self) -> List[str]:
        return [f"param_{j + 1:02d}" for j in range(self.n_params)]

    def start_epoch(self) -> int:
        stamp = pd.Timestamp(self.start_time)
        if stamp.tzinfo is None:
            stamp = stamp.tz_localize('UTC')
        return int(stamp.timestamp())

    def validate(self) -> 'SynthSpec':
        """
        Raises:
            SpecError: Infeasible or contradictory recipe
        """
        if self.n_turbines < 1 or self.rows_per_turbine < 1 or self.n_params < 1:
            raise SpecError("n_turbines, rows_per_turbine and n_params must all be >= 1")
        if not self.alarm_tags:
            raise SpecError("At least one alarm tag is required")
        for tag, rate in self.alarm_tags.items():
            if tag < 1:
                raise SpecError(f"Alarm tags must be >= 1, got {tag}")
            if not 0.0 < rate < 1.0:
                raise SpecError(f"Base rate of tag {tag} must be in (0, 1), got {rate}")
        if sum(self.alarm_tags.values()) >= 1.0:
            raise SpecError("Alarm base rates must sum to less than 1")
        for j, fraction in self.nan_injection.items():
            if not 0 <= j < self.n_params:
                raise SpecError(f"NaN injection names unknown parameter index {j}")
            if not 0.0 <= fraction < 1.0:
                raise SpecError(f"NaN fraction of parameter {j} must be in [0, 1), got {fraction}")
        if self.noise_std < 0 or self.drift_std < 0:
            raise SpecError("noise_std and drift_std must be >= 0")
        if not -1.0 < self.ar_coef < 1.0:
            raise SpecError(f"ar_coef must be in (-1, 1), got {self.ar_coef}")
        if self.raw_code_base < 0:
            raise SpecError("raw_code_base must be >= 0")

        signatures = {}
        for rule in self.precursor_rules:
            if rule.lead < 1:
                raise SpecError(f"Precursor lead must be >= 1, got {rule.lead}")
            if rule.tag not in self.alarm_tags:
                raise SpecError(f"Precursor rule names unknown tag {rule.tag}")
            if not 0 <= rule.param < self.n_params:
                raise SpecError(f"Precursor rule names unknown parameter index {rule.param}")
            key = (rule.param, rule.lead, float(rule.magnitude))
            if key in signatures and signatures[key] != rule.tag:
                raise SpecError(
                    f"Tags {signatures[key]} and {rule.tag} share the precursor "
                    f"(param {rule.param}, lead {rule.lead}, magnitude {rule.magnitude})"
                )
            signatures[key] = rule.tag
        if self.max_lead >= self.rows_per_turbine:
            raise SpecError("rows_per_turbine must exceed the longest precursor lead")
        return self

    def to_dict(self) -> dict:
        return {
            'n_turbines': self.n_turbines,
            'rows_per_turbine': self.rows_per_turbine,
            'n_params': self.n_params,
            'alarm_tags': {str(tag): rate for tag, rate in sorted(self.alarm_tags.items())},
            'precursor_rules': [rule.to_dict() for rule in self.precursor_rules],
            'noise_std': self.noise_std,
            'nan_injection': {str(j): f for j, f in sorted(self.nan_injection.items())},
            'seed': self.seed,
            'drift_std': self.drift_std,
            'ar_coef': self.ar_coef,
            'start_time': self.start_time,
            'raw_code_base': self.raw_code_base,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> 'SynthSpec':
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise SpecError(f"Unknown synth spec keys: {', '.join(sorted(unknown))}")

        values = dict(payload)
        try:
            if 'alarm_tags' in values:
                values['alarm_tags'] = {int(t): float(r) for t, r in values['alarm_tags'].items()}
            if 'nan_injection' in values:
                nan = values['nan_injection']
                if isinstance(nan, list):
                    nan = {j: f for j, f in enumerate(nan)}
                values['nan_injection'] = {int(j): float(f) for j, f in nan.items()}
            if 'precursor_rules' in values:
                values['precursor_rules'] = [
                    PrecursorRule(int(r['param']), float(r['magnitude']), int(r['lead']), int(r['tag']))
                    for r in values['precursor_rules']
                ]
        except (KeyError, TypeError, ValueError) as e:
            raise SpecError(f"Malformed synth spec: {e}")
        return cls(**values)


def load_synth_spec(path: str) -> SynthSpec:
    """Read a SynthSpec from JSON (missing keys take the defaults)."""
    if not os.path.exists(path):
        raise UsageError(f"Synth spec not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        try:
            payload = json.load(f)
        except json.JSONDecodeError as e:
            raise SpecError(f"{path}: invalid JSON ({e})")
    return SynthSpec.from_dict(payload).validate()


def _ar_baseline(rng: np.random.Generator, n_rows: int, n_params: int, ar_coef: float,
                 drift_std: float) -> np.ndarray:
    shocks = rng.normal(0.0, 1.0, size=(n_rows, n_params)) * drift_std
    baseline = np.zeros((n_rows, n_params))
    baseline[0] = shocks[0]
    for t in range(1, n_rows):
        baseline[t] = ar_coef * baseline[t - 1] + shocks[t]
    return baseline


def _sample_tags(rng: np.random.Generator, n_rows: int, alarm_tags: Dict[int, float],
                 min_row: int) -> np.ndarray:
    tags = np.array(sorted(alarm_tags), dtype=np.int64)
    edges = np.cumsum([alarm_tags[t] for t in tags])
    draws = rng.random(n_rows)
    slot = np.searchsorted(edges, draws, side='right')
    y2 = np.where(slot < len(tags), tags[np.minimum(slot, len(tags) - 1)], 0)
    # rows whose precursor would fall before the first row carry no alarm
    y2[:min_row] = 0
    return y2.astype(np.int64)


def _generate_turbine(spec: SynthSpec, turbine_id: str,
                      seed_seq: np.random.SeedSequence) -> Tuple[MergedDataset, List[dict]]:
    rng = np.random.default_rng(seed_seq)
    N, M = spec.rows_per_turbine, spec.n_params

    values = _ar_baseline(rng, N, M, spec.ar_coef, spec.drift_std)
    y2 = _sample_tags(rng, N, spec.alarm_tags, spec.max_lead)

    alarm_rows = np.flatnonzero(y2 > 0)
    for rule in spec.precursor_rules:
        rows = alarm_rows[y2[alarm_rows] == rule.tag]
        np.add.at(values, (rows - rule.lead, rule.param), rule.magnitude)

    if spec.noise_std > 0:
        values = values + rng.normal(0.0, spec.noise_std, size=(N, M))

    for j in sorted(spec.nan_injection):
        count = int(round(spec.nan_injection[j] * N))
        if count:
            values[rng.choice(N, size=count, replace=False), j] = np.nan

    timestamps = spec.start_epoch() + ROW_SECONDS * np.arange(N, dtype=np.int64)
    dataset = MergedDataset(
        turbine_id=turbine_id,
        timestamps=timestamps,
        param_ids=spec.param_ids(),
        values=values,
        y1=(y2 > 0).astype(np.int64),
        y2=y2,
    )
    planted = [
        {
            'row': int(t),
            'timestamp': int(timestamps[t]),
            'tag': int(y2[t]),
            'raw_code': spec.raw_code_base + int(y2[t]),
        }
        for t in alarm_rows
    ]
    return dataset, planted


def generate(spec: SynthSpec) -> Tuple[List[MergedDataset], dict]:
    """
    Generate every turbine of a spec.

    Each turbine draws from its own generator spawned from SeedSequence(seed),
    so turbine n is identical whatever n_turbines is.

    Returns:
        tuple: (datasets in turbine order, ground-truth dict)

    Raises:
        SpecError: Infeasible spec
    """
    spec.validate()
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.n_turbines)

    datasets = []
    planted: Dict[str, List[dict]] = {}
    for turbine_id, seed_seq in zip(spec.turbine_ids(), seeds):
        dataset, alarms = _generate_turbine(spec, turbine_id, seed_seq)
        datasets.append(dataset)
        planted[turbine_id] = alarms
        logger.info(f"{turbine_id}: {dataset.n_rows} rows, {len(alarms)} planted alarms")

    ground_truth = {
        'spec': spec.to_dict(),
        'n_alarms': sum(len(a) for a in planted.values()),
        'alarms': planted,
    }
    return datasets, ground_truth


def dataset_events(dataset: MergedDataset, raw_code_base: int) -> List[AlarmEvent]:
    """Alarm log entries for every alarm row of a generated dataset."""
    return [
        AlarmEvent(
            start_time=int(dataset.timestamps[t]),
            duration=EVENT_DURATION,
            raw_code=raw_code_base + int(dataset.y2[t]),
            description=f"Synthetic alarm {int(dataset.y2[t])}",
            category="synthetic",
        )
        for t in np.flatnonzero(dataset.y2 > 0)
    ]


def write_synth_dataset(spec: SynthSpec, out_dir: str) -> Dict[str, str]:
    """
    Generate and write scada_<id>.csv, alarms_<id>.csv, ground_truth.json and
    a ready-to-use afc.env config.

    Returns:
        dict: Name -> written path
    """
    datasets, ground_truth = generate(spec)
    ensure_dir(out_dir)

    written = {}
    for dataset in datasets:
        tid = dataset.turbine_id
        written[f"scada_{tid}"] = write_scada(dataset, os.path.join(out_dir, f"scada_{tid}.csv"))
        written[f"alarms_{tid}"] = write_alarm_log(
            dataset_events(dataset, spec.raw_code_base), os.path.join(out_dir, f"alarms_{tid}.csv")
        )

    written['ground_truth'] = write_json(os.path.join(out_dir, 'ground_truth.json'), ground_truth)

    config_path = os.path.join(out_dir, 'afc.env')
    with open(config_path, 'w', encoding='utf-8') as f:
        f.write(f"DATA_DIR={out_dir}\n")
        f.write(f"TURBINES={','.join(spec.turbine_ids())}\n")
    written['config'] = config_path

    logger.info(f"Wrote {len(datasets)} turbines ({ground_truth['n_alarms']} alarms) to {out_dir}")
    return written
