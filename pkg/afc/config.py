"""
Configuration module for the AFC pipeline.

The pipeline config is a flat KEY=value file in dotenv syntax. Values are
resolved in this order (first hit wins):
- explicit overrides (CLI flags)
- environment variables prefixed with AFC_ (a project .env file is loaded too)
- the config file
- built-in defaults (the study's defaults: L=12, 20% NaN threshold,
  widths 512/256/128/64/32/16, 10 epochs per dataset)

Example config:
    DATA_DIR=data/synthetic
    TURBINES=WT01,WT02,WT03,WT04,WT05
    FORECAST_OFFSETS=1,2,3
    LAYER_WIDTHS=32,16

Author: AFC Development Team
"""

import math
import os
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Any

from dotenv import dotenv_values, load_dotenv

from errors import UsageError
from regressor import TrainConfig, DEFAULT_LAYER_WIDTHS
from classify import ClassifierParams

# Load environment variables from .env file
load_dotenv()

ENV_PREFIX = "AFC_"
TRAIN_FRACTION = 0.6
SUPPORTED_OFFSETS = (0, 1, 2, 3)


def get_env_var(key: str) -> str:
    """
    Get an AFC_ prefixed environment variable.

    Args:
        key (str): Config key without prefix, e.g. "SEED"

    Returns:
        str: Value, or '' when unset
    """
    return os.getenv(f"{ENV_PREFIX}{key}", '')


@dataclass
class PipelineConfig:
    """Every setting the pipeline stages need."""

    data_dir: str = "data"
    turbines: List[str] = field(default_factory=list)
    train_turbines: List[str] = field(default_factory=list)
    test_turbines: List[str] = field(default_factory=list)
    reference_turbine: str = ""
    scada_paths: Dict[str, str] = field(default_factory=dict)
    alarm_paths: Dict[str, str] = field(default_factory=dict)
    nan_threshold: float = 0.20
    window_length: int = 12
    forecast_offsets: List[int] = field(default_factory=lambda: [1])
    layer_widths: List[int] = field(default_factory=lambda: list(DEFAULT_LAYER_WIDTHS))
    epochs_per_dataset: int = 10
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    batch_size: int = 64
    decision_threshold: float = 0.5
    gradient_clip_norm: float = 1.0
    knn_k: int = 5
    dt_max_depth: Optional[int] = None
    dt_min_samples_split: int = 2
    rf_n_trees: int = 100
    rf_max_features: str = "sqrt"
    rf_bootstrap: bool = True
    output_dir: str = "out"
    seed: int = 42
    jobs: int = 1
    sweep_depths: List[List[int]] = field(default_factory=list)
    sweep_fws: List[int] = field(default_factory=list)

    def scada_path(self, turbine: str) -> str:
        return self.scada_paths.get(turbine, os.path.join(self.data_dir, f"scada_{turbine}.csv"))

    def alarm_path(self, turbine: str) -> str:
        return self.alarm_paths.get(turbine, os.path.join(self.data_dir, f"alarms_{turbine}.csv"))

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs_per_dataset=self.epochs_per_dataset,
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.adam_epsilon,
            batch_size=self.batch_size,
            seed=self.seed,
            decision_threshold=self.decision_threshold,
            gradient_clip_norm=self.gradient_clip_norm,
        )

    def classifier_params(self) -> ClassifierParams:
        return ClassifierParams(
            k=self.knn_k,
            max_depth=self.dt_max_depth,
            min_samples_split=self.dt_min_samples_split,
            n_trees=self.rf_n_trees,
            max_features=self.rf_max_features,
            bootstrap=self.rf_bootstrap,
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _parse_list(value: str) -> List[str]:
    return [item.strip() for item in value.split(',') if item.strip()]


def _parse_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise UsageError(f"{key} must be an integer, got '{value}'")


def _parse_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise UsageError(f"{key} must be a number, got '{value}'")


def _parse_bool(key: str, value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise UsageError(f"{key} must be true/false, got '{value}'")


def parse_widths(key: str, value: str) -> List[int]:
    """Parse "32,16" into [32, 16]."""
    widths = [_parse_int(key, item) for item in _parse_list(value)]
    if not widths:
        raise UsageError(f"{key} must list at least one layer width")
    if any(w <= 0 for w in widths):
        raise UsageError(f"{key} must contain positive widths, got {widths}")
    return widths


def parse_offsets(key: str, value: str) -> List[int]:
    """Parse "1,2,3" into forecast offsets, rejecting anything outside 0..3."""
    offsets = [_parse_int(key, item) for item in _parse_list(value)]
    if not offsets:
        raise UsageError(f"{key} must list at least one forecast offset")
    bad = [f for f in offsets if f not in SUPPORTED_OFFSETS]
    if bad:
        raise UsageError(f"{key}: forecast offset {bad[0]} not supported (range 0-3)")
    return offsets


def default_split(turbines: List[str]) -> Tuple[List[str], List[str]]:
    """
    Whole-turbine train/test split: the first 60% of sorted ids train.

    With 14 turbines this gives 9 training and 5 testing turbines.
    """
    ordered = sorted(turbines)
    if len(ordered) < 2:
        raise UsageError("At least two turbines are needed for a train/test split")
    n_train = min(math.ceil(TRAIN_FRACTION * len(ordered)), len(ordered) - 1)
    return ordered[:n_train], ordered[n_train:]


def _resolve(key: str, file_values: Dict[str, Optional[str]], overrides: Dict[str, Any]) -> Optional[Any]:
    if key in overrides and overrides[key] is not None:
        return overrides[key]
    env_value = get_env_var(key)
    if env_value:
        return env_value
    value = file_values.get(key)
    if value is None or value == '':
        return None
    return value


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    """
    Load and validate the pipeline configuration.

    Args:
        path (str): Path to the KEY=value config file (optional)
        overrides (dict): Upper-case keys taking precedence over file and env

    Returns:
        PipelineConfig: Validated configuration

    Raises:
        UsageError: If the file is missing or a value is invalid
    """
    overrides = {k.upper(): v for k, v in (overrides or {}).items()}
    file_values: Dict[str, Optional[str]] = {}

    if path is not None:
        if not os.path.exists(path):
            raise UsageError(f"Config file not found: {path}")
        file_values = {k.upper(): v for k, v in dotenv_values(path).items()}

    cfg = PipelineConfig()

    def get(key: str) -> Optional[Any]:
        return _resolve(key, file_values, overrides)

    if get('DATA_DIR') is not None:
        cfg.data_dir = str(get('DATA_DIR'))
    if get('OUTPUT_DIR') is not None:
        cfg.output_dir = str(get('OUTPUT_DIR'))

    for key, attr in (('TURBINES', 'turbines'), ('TRAIN_TURBINES', 'train_turbines'),
                      ('TEST_TURBINES', 'test_turbines')):
        value = get(key)
        if value is not None:
            setattr(cfg, attr, value if isinstance(value, list) else _parse_list(str(value)))

    if get('REFERENCE_TURBINE') is not None:
        cfg.reference_turbine = str(get('REFERENCE_TURBINE'))

    int_keys = {
        'WINDOW_LENGTH': 'window_length',
        'EPOCHS_PER_DATASET': 'epochs_per_dataset',
        'BATCH_SIZE': 'batch_size',
        'KNN_K': 'knn_k',
        'DT_MIN_SAMPLES_SPLIT': 'dt_min_samples_split',
        'RF_N_TREES': 'rf_n_trees',
        'SEED': 'seed',
        'JOBS': 'jobs',
    }
    for key, attr in int_keys.items():
        value = get(key)
        if value is not None:
            setattr(cfg, attr, _parse_int(key, str(value)))

    float_keys = {
        'NAN_THRESHOLD': 'nan_threshold',
        'LEARNING_RATE': 'learning_rate',
        'BETA1': 'beta1',
        'BETA2': 'beta2',
        'ADAM_EPSILON': 'adam_epsilon',
        'DECISION_THRESHOLD': 'decision_threshold',
        'GRADIENT_CLIP_NORM': 'gradient_clip_norm',
    }
    for key, attr in float_keys.items():
        value = get(key)
        if value is not None:
            setattr(cfg, attr, _parse_float(key, str(value)))

    if get('DT_MAX_DEPTH') is not None:
        cfg.dt_max_depth = _parse_int('DT_MAX_DEPTH', str(get('DT_MAX_DEPTH')))
    if get('RF_MAX_FEATURES') is not None:
        cfg.rf_max_features = str(get('RF_MAX_FEATURES'))
    if get('RF_BOOTSTRAP') is not None:
        cfg.rf_bootstrap = _parse_bool('RF_BOOTSTRAP', str(get('RF_BOOTSTRAP')))

    widths = get('LAYER_WIDTHS')
    if widths is not None:
        cfg.layer_widths = widths if isinstance(widths, list) else parse_widths('LAYER_WIDTHS', str(widths))

    offsets = get('FORECAST_OFFSETS')
    if offsets is not None:
        cfg.forecast_offsets = offsets if isinstance(offsets, list) else parse_offsets('FORECAST_OFFSETS', str(offsets))

    sweep_fws = get('SWEEP_FWS')
    if sweep_fws is not None:
        cfg.sweep_fws = sweep_fws if isinstance(sweep_fws, list) else parse_offsets('SWEEP_FWS', str(sweep_fws))

    sweep_depths = get('SWEEP_DEPTHS')
    if sweep_depths is not None:
        # Stacks separated by ';', widths by ',': "16;32,16;64,32,16"
        cfg.sweep_depths = sweep_depths if isinstance(sweep_depths, list) else [
            parse_widths('SWEEP_DEPTHS', stack) for stack in str(sweep_depths).split(';') if stack.strip()
        ]

    for turbine in cfg.turbines:
        scada_key = f"SCADA_{turbine.upper()}"
        alarm_key = f"ALARMS_{turbine.upper()}"
        if get(scada_key) is not None:
            cfg.scada_paths[turbine] = str(get(scada_key))
        if get(alarm_key) is not None:
            cfg.alarm_paths[turbine] = str(get(alarm_key))

    return validate_config(cfg)


def validate_config(cfg: PipelineConfig) -> PipelineConfig:
    """
    Fill the default split and check every cross-field contract.

    Raises:
        UsageError: On the first violated contract
    """
    if not cfg.turbines:
        cfg.turbines = sorted(set(cfg.train_turbines) | set(cfg.test_turbines))
    if not cfg.turbines:
        raise UsageError("No turbines configured (set TURBINES)")

    if not cfg.train_turbines and not cfg.test_turbines:
        cfg.train_turbines, cfg.test_turbines = default_split(cfg.turbines)
    elif not cfg.test_turbines:
        cfg.test_turbines = sorted(set(cfg.turbines) - set(cfg.train_turbines))
    elif not cfg.train_turbines:
        cfg.train_turbines = sorted(set(cfg.turbines) - set(cfg.test_turbines))

    cfg.train_turbines = sorted(cfg.train_turbines)
    cfg.test_turbines = sorted(cfg.test_turbines)

    if not cfg.train_turbines or not cfg.test_turbines:
        raise UsageError("Training and testing turbine sets must both be non-empty")
    overlap = set(cfg.train_turbines) & set(cfg.test_turbines)
    if overlap:
        raise UsageError(f"Turbines in both training and testing sets: {', '.join(sorted(overlap))}")
    unknown = (set(cfg.train_turbines) | set(cfg.test_turbines)) - set(cfg.turbines)
    if unknown:
        raise UsageError(f"Split names unknown turbines: {', '.join(sorted(unknown))}")

    if not cfg.reference_turbine:
        cfg.reference_turbine = cfg.train_turbines[0]
    if cfg.reference_turbine not in cfg.train_turbines:
        raise UsageError(f"Reference turbine {cfg.reference_turbine} must be a training turbine")

    if not 0.0 <= cfg.nan_threshold <= 1.0:
        raise UsageError(f"NAN_THRESHOLD must be between 0 and 1, got {cfg.nan_threshold}")
    if cfg.window_length < 1:
        raise UsageError(f"WINDOW_LENGTH must be at least 1, got {cfg.window_length}")
    bad = [f for f in cfg.forecast_offsets + cfg.sweep_fws if f not in SUPPORTED_OFFSETS]
    if bad:
        raise UsageError(f"Forecast offset {bad[0]} not supported (range 0-3)")
    if any(w <= 0 for w in cfg.layer_widths) or not cfg.layer_widths:
        raise UsageError(f"LAYER_WIDTHS must be positive, got {cfg.layer_widths}")
    if cfg.jobs < 1:
        raise UsageError(f"JOBS must be at least 1, got {cfg.jobs}")

    # Both raise UsageError on their own contracts
    cfg.train_config().validate()
    cfg.classifier_params().validate()

    return cfg


def write_config(cfg: PipelineConfig, path: str) -> None:
    """Write a config back out as KEY=value lines (used to record a run)."""
    lines = [
        f"DATA_DIR={cfg.data_dir}",
        f"TURBINES={','.join(cfg.turbines)}",
        f"TRAIN_TURBINES={','.join(cfg.train_turbines)}",
        f"TEST_TURBINES={','.join(cfg.test_turbines)}",
        f"REFERENCE_TURBINE={cfg.reference_turbine}",
        f"NAN_THRESHOLD={cfg.nan_threshold}",
        f"WINDOW_LENGTH={cfg.window_length}",
        f"FORECAST_OFFSETS={','.join(str(f) for f in cfg.forecast_offsets)}",
        f"LAYER_WIDTHS={','.join(str(w) for w in cfg.layer_widths)}",
        f"EPOCHS_PER_DATASET={cfg.epochs_per_dataset}",
        f"LEARNING_RATE={cfg.learning_rate}",
        f"BETA1={cfg.beta1}",
        f"BETA2={cfg.beta2}",
        f"ADAM_EPSILON={cfg.adam_epsilon}",
        f"BATCH_SIZE={cfg.batch_size}",
        f"DECISION_THRESHOLD={cfg.decision_threshold}",
        f"GRADIENT_CLIP_NORM={cfg.gradient_clip_norm}",
        f"KNN_K={cfg.knn_k}",
        f"DT_MAX_DEPTH={'' if cfg.dt_max_depth is None else cfg.dt_max_depth}",
        f"DT_MIN_SAMPLES_SPLIT={cfg.dt_min_samples_split}",
        f"RF_N_TREES={cfg.rf_n_trees}",
        f"RF_MAX_FEATURES={cfg.rf_max_features}",
        f"RF_BOOTSTRAP={'true' if cfg.rf_bootstrap else 'false'}",
        f"OUTPUT_DIR={cfg.output_dir}",
        f"SEED={cfg.seed}",
        f"JOBS={cfg.jobs}",
    ]
    for turbine, scada in sorted(cfg.scada_paths.items()):
        lines.append(f"SCADA_{turbine.upper()}={scada}")
    for turbine, alarms in sorted(cfg.alarm_paths.items()):
        lines.append(f"ALARMS_{turbine.upper()}={alarms}")

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        f.write('\n'.join(lines) + '\n')
