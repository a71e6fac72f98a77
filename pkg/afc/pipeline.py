"""
Pipeline stages behind the CLI subcommands.

Stages exchange artifacts through the output directory:

    <out>/codebook.json, retention.json, scaler.json, nan_stats.csv, manifest.json
    <out>/merged/<turbine>.npz                 scaled, imputed, reduced datasets
    <out>/models/fw<f>/lstm.npz, knn.npz, dt.npz, rf.npz, loss_trace.csv, training.json
    <out>/reports/report_<turbine>_fw<f>.json / .csv
    <out>/reports/summary_table.csv, contingency_fractions.csv
    <out>/sweeps/depth_sweep.csv, fw_sweep.csv

Only training turbines feed the retention mask, the scaler and every model.

Author: AFC Development Team
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from artifacts import (
    config_hash, ensure_dir, load_arrays, read_json, save_arrays, sha256_file, write_json
)
from classify import fit_all, load_classifiers, predict_all, save_classifiers
from config import PipelineConfig, write_config
from errors import DataError, ParseError, UsageError
from evaluate import (
    TurbineReport, build_turbine_report, contingency_table, report_to_csv, summary_table
)
from ingest import AlarmCodebook, MergedDataset, build_codebook, merge_alarms, parse_alarm_log, parse_scada
from preprocess import (
    RetentionMask, ScalerParams, apply_retention, apply_scaler, compute_retention, fit_scaler,
    impute, nan_statistics
)
from regressor import LstmStack, depth_sweep, init_model, load_model, predict_binary, save_model, train
from windowing import WindowSpec, WindowedSet, build_windows, flatten_windows, select_alarm_windows

logger = logging.getLogger(__name__)


@dataclass
class PreparedData:
    """Output of the preprocess stage."""

    datasets: Dict[str, MergedDataset]
    codebook: AlarmCodebook
    retention: RetentionMask
    scaler: ScalerParams
    nan_stats: pd.DataFrame = field(default_factory=pd.DataFrame)
    input_hashes: Dict[str, str] = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.retention.M

    @property
    def K(self) -> int:
        return self.codebook.K


@dataclass
class TrainedModels:
    fw: int
    lstm: LstmStack
    loss_trace: List[Dict]
    classifiers: Dict[str, object]
    n_classifier_rows: int


def _paths(cfg: PipelineConfig) -> Dict[str, str]:
    out = cfg.output_dir
    return {
        'codebook': os.path.join(out, 'codebook.json'),
        'retention': os.path.join(out, 'retention.json'),
        'scaler': os.path.join(out, 'scaler.json'),
        'nan_stats': os.path.join(out, 'nan_stats.csv'),
        'manifest': os.path.join(out, 'manifest.json'),
        'run_config': os.path.join(out, 'run_config.env'),
        'merged': os.path.join(out, 'merged'),
        'models': os.path.join(out, 'models'),
        'reports': os.path.join(out, 'reports'),
        'sweeps': os.path.join(out, 'sweeps'),
    }


def model_dir(cfg: PipelineConfig, fw: int) -> str:
    return os.path.join(_paths(cfg)['models'], f"fw{fw}")


def _in_context(turbine: str, error: DataError) -> DataError:
    """Prefix a data error with its turbine; parse errors already carry file/row/column."""
    if isinstance(error, ParseError) or str(error).startswith(f"{turbine}:"):
        return error
    return DataError(f"{turbine}: {error}")


def _load_raw(cfg: PipelineConfig, turbine: str):
    try:
        scada = parse_scada(cfg.scada_path(turbine), turbine_id=turbine)
        events = parse_alarm_log(cfg.alarm_path(turbine))
    except DataError as e:
        raise _in_context(turbine, e) from e
    return scada, events


# ---------------------------------------------------------------------------
# Preprocess
# ---------------------------------------------------------------------------

def prepare_datasets(cfg: PipelineConfig) -> PreparedData:
    """
    Parse, merge, reduce, impute and scale every configured turbine.

    Raises:
        UsageError: Missing input file
        DataError: Malformed or inconsistent data (message names the turbine/file)
    """
    turbines = sorted(cfg.turbines)
    loaded = Parallel(n_jobs=cfg.jobs)(delayed(_load_raw)(cfg, t) for t in turbines)
    raw = dict(zip(turbines, loaded))

    # Codebook covers every code seen on any turbine; it is a vocabulary only
    codebook = build_codebook([e for _, events in raw.values() for e in events])
    logger.info(f"Codebook: {codebook.K} alarm codes")

    merged = {}
    for turbine in turbines:
        scada, events = raw[turbine]
        try:
            merged[turbine] = merge_alarms(scada, events, codebook)
        except DataError as e:
            raise _in_context(turbine, e) from e

    stats = nan_statistics([merged[t] for t in turbines])

    retention = compute_retention(merged[cfg.reference_turbine], cfg.nan_threshold)
    reduced = {t: impute(apply_retention(merged[t], retention)) for t in turbines}

    scaler = fit_scaler([reduced[t] for t in cfg.train_turbines])
    datasets = {t: apply_scaler(reduced[t], scaler) for t in turbines}

    hashes = {}
    for turbine in turbines:
        hashes[f"scada_{turbine}"] = sha256_file(cfg.scada_path(turbine))
        hashes[f"alarms_{turbine}"] = sha256_file(cfg.alarm_path(turbine))

    return PreparedData(datasets, codebook, retention, scaler, stats, hashes)


def _merged_path(cfg: PipelineConfig, turbine: str) -> str:
    return os.path.join(_paths(cfg)['merged'], f"{turbine}.npz")


def save_prepared(cfg: PipelineConfig, prepared: PreparedData) -> Dict[str, str]:
    paths = _paths(cfg)
    ensure_dir(cfg.output_dir)

    write_json(paths['codebook'], prepared.codebook.to_dict())
    write_json(paths['retention'], prepared.retention.to_dict())
    write_json(paths['scaler'], prepared.scaler.to_dict())
    prepared.nan_stats.to_csv(paths['nan_stats'], index=False)

    for turbine, dataset in sorted(prepared.datasets.items()):
        save_arrays(_merged_path(cfg, turbine), 'merged',
                    {'turbine_id': turbine, 'param_ids': dataset.param_ids},
                    {'timestamps': dataset.timestamps, 'values': dataset.values,
                     'y1': dataset.y1, 'y2': dataset.y2})

    write_json(paths['manifest'], {
        'turbines': sorted(prepared.datasets),
        'train_turbines': cfg.train_turbines,
        'test_turbines': cfg.test_turbines,
        'reference_turbine': cfg.reference_turbine,
        'M': prepared.M,
        'K': prepared.K,
        'rows': {t: d.n_rows for t, d in sorted(prepared.datasets.items())},
        'input_sha256': prepared.input_hashes,
        'nan_threshold': cfg.nan_threshold,
    })
    write_config(cfg, paths['run_config'])
    return paths


def load_prepared(cfg: PipelineConfig, turbines: Optional[Sequence[str]] = None) -> PreparedData:
    """
    Load preprocess artifacts for the given turbines (all configured by default).

    Raises:
        UsageError: Preprocess has not been run for this output directory
    """
    paths = _paths(cfg)
    codebook = AlarmCodebook.from_dict(read_json(paths['codebook']))
    retention = RetentionMask.from_dict(read_json(paths['retention']))
    scaler = ScalerParams.from_dict(read_json(paths['scaler']))

    datasets = {}
    for turbine in sorted(turbines or cfg.turbines):
        header, arrays = load_arrays(_merged_path(cfg, turbine), 'merged')
        datasets[turbine] = MergedDataset(
            turbine_id=header['turbine_id'],
            timestamps=arrays['timestamps'],
            param_ids=list(header['param_ids']),
            values=arrays['values'],
            y1=arrays['y1'],
            y2=arrays['y2'],
        )
    return PreparedData(datasets, codebook, retention, scaler)


def run_preprocess(cfg: PipelineConfig) -> PreparedData:
    prepared = prepare_datasets(cfg)
    save_prepared(cfg, prepared)
    logger.info(f"Preprocess artifacts written to {cfg.output_dir}")
    return prepared


def _obtain_prepared(cfg: PipelineConfig) -> PreparedData:
    if os.path.exists(_paths(cfg)['manifest']):
        return load_prepared(cfg)
    logger.info("No preprocess artifacts found; preparing datasets in memory")
    return prepare_datasets(cfg)


# ---------------------------------------------------------------------------
# Train
# ---------------------------------------------------------------------------

def _windows(cfg: PipelineConfig, prepared: PreparedData, turbines: Sequence[str], fw: int) -> List[WindowedSet]:
    spec = WindowSpec(length=cfg.window_length, width=prepared.M, forecast_offset=fw)
    return [build_windows(prepared.datasets[t], spec) for t in sorted(turbines)]


def train_stage(cfg: PipelineConfig, prepared: PreparedData, fw: int,
                layer_widths: Optional[Sequence[int]] = None) -> TrainedModels:
    """
    Train the LSTM on the training turbines (ascending id order), then fit the
    classifiers on the flagged training windows that carry a true alarm.

    Raises:
        DataError: No flagged windows to train classifiers
        TrainingError: Non-finite loss
    """
    train_cfg = cfg.train_config()
    train_sets = _windows(cfg, prepared, cfg.train_turbines, fw)

    widths = list(layer_widths or cfg.layer_widths)
    model = init_model(widths, cfg.window_length, prepared.M, cfg.seed)
    model, trace = train(model, train_sets, train_cfg)

    classifiers, n_rows = fit_classifiers(cfg, prepared, model, train_sets, fw)
    return TrainedModels(fw, model, trace, classifiers, n_rows)


def fit_classifiers(cfg: PipelineConfig, prepared: PreparedData, model: LstmStack,
                    train_sets: Sequence[WindowedSet], fw: int):
    """
    Fit KNN / DT / RF on the windows the trained LSTM flags that carry a true alarm.

    Returns:
        tuple: (classifiers by name, number of training rows)

    Raises:
        DataError: No flagged windows to train classifiers
    """
    X_parts, tag_parts = [], []
    for ws in train_sets:
        forecast = predict_binary(model, ws, cfg.decision_threshold)
        flagged = select_alarm_windows(ws, forecast.binary)
        alarms = flagged.y1 == 1
        X_parts.append(flatten_windows(flagged)[alarms])
        tag_parts.append(flagged.y2[alarms])

    X = np.concatenate(X_parts) if X_parts else np.empty((0, cfg.window_length * prepared.M))
    tags = np.concatenate(tag_parts) if tag_parts else np.empty(0, dtype=np.int64)
    if len(tags) == 0:
        raise DataError(f"FW{fw}: no flagged windows to train classifiers")

    classifiers = fit_all(X, tags, cfg.classifier_params(), seed=cfg.seed, jobs=cfg.jobs)
    return classifiers, len(tags)


def run_train(cfg: PipelineConfig) -> Dict[int, TrainedModels]:
    """Train and save models for every configured FW offset."""
    prepared = load_prepared(cfg, cfg.train_turbines)
    results = {}
    for fw in cfg.forecast_offsets:
        logger.info(f"Training FW{fw} (offset {fw * 10} min)")
        trained = train_stage(cfg, prepared, fw)

        directory = ensure_dir(model_dir(cfg, fw))
        save_model(trained.lstm, os.path.join(directory, 'lstm.npz'), cfg.train_config(), cfg.decision_threshold)
        save_classifiers(trained.classifiers, directory)
        pd.DataFrame(trained.loss_trace, columns=['epoch', 'dataset', 'turbine', 'dataset_epoch', 'loss']) \
            .to_csv(os.path.join(directory, 'loss_trace.csv'), index=False, float_format='%.17g')
        write_json(os.path.join(directory, 'training.json'), {
            'fw': fw,
            'train_turbines': cfg.train_turbines,
            'epochs': len(trained.loss_trace),
            'final_loss': trained.loss_trace[-1]['loss'] if trained.loss_trace else None,
            'classifier_rows': trained.n_classifier_rows,
            'config_hash': config_hash(cfg.to_dict()),
        })
        results[fw] = trained
    return results


def load_trained(cfg: PipelineConfig, fw: int) -> TrainedModels:
    directory = model_dir(cfg, fw)
    lstm, _ = load_model(os.path.join(directory, 'lstm.npz'))
    classifiers = load_classifiers(directory)
    info = read_json(os.path.join(directory, 'training.json'))
    return TrainedModels(fw, lstm, [], classifiers, info['classifier_rows'])


# ---------------------------------------------------------------------------
# Evaluate
# ---------------------------------------------------------------------------

def evaluate_stage(cfg: PipelineConfig, prepared: PreparedData, trained: TrainedModels) -> List[TurbineReport]:
    """Score every test turbine with one FW's trained models."""
    reports = []
    for ws in _windows(cfg, prepared, cfg.test_turbines, trained.fw):
        forecast = predict_binary(trained.lstm, ws, cfg.decision_threshold)
        flagged = select_alarm_windows(ws, forecast.binary)
        flagged_preds = predict_all(trained.classifiers, flatten_windows(flagged))

        alarm_windows = flatten_windows(ws)[ws.y1 == 1]
        standalone = predict_all(trained.classifiers, alarm_windows)

        reports.append(build_turbine_report(
            ws.turbine_id, trained.fw, prepared.K, ws.y2, forecast.binary, flagged_preds, standalone
        ))
    return reports


def write_reports(cfg: PipelineConfig, reports: Sequence[TurbineReport]) -> Dict[str, str]:
    directory = ensure_dir(_paths(cfg)['reports'])
    written = {}
    for report in reports:
        stem = os.path.join(directory, f"report_{report.turbine}_fw{report.fw}")
        written[f"{stem}.json"] = write_json(f"{stem}.json", report.to_dict())
        written[f"{stem}.csv"] = report_to_csv(report, f"{stem}.csv")

    summary = summary_table(reports)
    summary_path = os.path.join(directory, 'summary_table.csv')
    summary.to_csv(summary_path, na_rep='')
    written['summary_table'] = summary_path

    fractions_path = os.path.join(directory, 'contingency_fractions.csv')
    contingency_table(reports).to_csv(fractions_path, index=False, na_rep='')
    written['contingency_fractions'] = fractions_path
    return written


def run_evaluate(cfg: PipelineConfig) -> List[TurbineReport]:
    prepared = load_prepared(cfg, cfg.test_turbines)
    reports = []
    for fw in cfg.forecast_offsets:
        reports.extend(evaluate_stage(cfg, prepared, load_trained(cfg, fw)))
    write_reports(cfg, reports)
    return reports


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def _mean_defined(values: Sequence[Optional[float]]) -> Optional[float]:
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else None


def run_depth_sweep(cfg: PipelineConfig, stacks: Sequence[Sequence[int]],
                    prepared: Optional[PreparedData] = None) -> pd.DataFrame:
    """
    LSTM recall and downstream final accuracy per layer stack, at the first
    configured FW offset.
    """
    if not stacks:
        raise UsageError("Depth sweep needs at least one layer stack (--depths)")
    prepared = prepared or _obtain_prepared(cfg)
    fw = cfg.forecast_offsets[0]
    train_sets = _windows(cfg, prepared, cfg.train_turbines, fw)

    def score(model: LstmStack) -> Dict[str, object]:
        try:
            classifiers, n_rows = fit_classifiers(cfg, prepared, model, train_sets, fw)
        except DataError as e:
            logger.warning(f"depth {len(model.layer_widths)}: {e}")
            return {'final_accuracy': None, 'note': str(e)}
        reports = evaluate_stage(cfg, prepared, TrainedModels(fw, model, [], classifiers, n_rows))
        return {'final_accuracy': _mean_defined([r.final_accuracy for r in reports]), 'note': ''}

    table = depth_sweep(
        cfg.train_config(), stacks, train_sets,
        _windows(cfg, prepared, cfg.test_turbines, fw),
        score=score,
    )
    table.insert(0, 'fw', fw)

    path = os.path.join(ensure_dir(_paths(cfg)['sweeps']), 'depth_sweep.csv')
    table.to_csv(path, index=False, na_rep='')
    return table


def run_fw_sweep(cfg: PipelineConfig, fws: Sequence[int],
                 prepared: Optional[PreparedData] = None) -> pd.DataFrame:
    """
    Full train + evaluate per FW offset; one row per offset with averaged
    regression recall, FPAF and final accuracy over the test turbines.

    An offset whose regressor flags nothing records None scores.
    """
    if not fws:
        raise UsageError("FW sweep needs at least one offset (--fws)")
    prepared = prepared or _obtain_prepared(cfg)

    rows = []
    for fw in fws:
        row = {'fw': fw, 'regression_recall': None, 'fpaf': None, 'final_accuracy': None, 'note': ''}
        try:
            reports = evaluate_stage(cfg, prepared, train_stage(cfg, prepared, fw))
        except DataError as e:
            logger.warning(f"FW{fw}: {e}")
            row['note'] = str(e)
        else:
            row['regression_recall'] = _mean_defined([r.regression_metrics.recall for r in reports])
            row['fpaf'] = _mean_defined([r.fpaf.fpaf_fraction for r in reports])
            row['final_accuracy'] = _mean_defined([r.final_accuracy for r in reports])
        rows.append(row)

    table = pd.DataFrame(rows, columns=['fw', 'regression_recall', 'fpaf', 'final_accuracy', 'note'])
    path = os.path.join(ensure_dir(_paths(cfg)['sweeps']), 'fw_sweep.csv')
    table.to_csv(path, index=False, na_rep='')
    return table


def run_sweep(cfg: PipelineConfig, depths: Optional[Sequence[Sequence[int]]] = None,
              fws: Optional[Sequence[int]] = None) -> Dict[str, pd.DataFrame]:
    depths = depths if depths is not None else cfg.sweep_depths
    fws = fws if fws is not None else cfg.sweep_fws
    if not depths and not fws:
        raise UsageError("Nothing to sweep: pass --depths and/or --fws (or SWEEP_DEPTHS / SWEEP_FWS)")

    prepared = _obtain_prepared(cfg)
    tables = {}
    if depths:
        tables['depth'] = run_depth_sweep(cfg, depths, prepared)
    if fws:
        tables['fw'] = run_fw_sweep(cfg, fws, prepared)
    return tables
