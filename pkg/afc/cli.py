"""
Command-line interface for the AFC pipeline.

Subcommands:
    synth       Generate a synthetic multi-turbine dataset (CSV + ground truth)
    preprocess  Parse, merge, reduce, impute and scale -> <out>/ artifacts
    train       Train the LSTM regressor and the KNN / DT / RF classifiers
    evaluate    Score the test turbines and write reports + summary table
    sweep       Layer-depth and/or forecast-window comparison tables

Usage:
    python main.py synth --out data/synthetic
    python main.py preprocess --config data/synthetic/afc.env --out out
    python main.py train --config data/synthetic/afc.env --out out --fw 1,2,3
    python main.py evaluate --config data/synthetic/afc.env --out out --fw 1,2,3
    python main.py sweep --config data/synthetic/afc.env --depths "16;32,16" --fws 1,2,3

Exit codes: 0 success, 1 internal/training error, 2 usage or config error
(including missing input files), 3 data error, 130 interrupted.

Author: AFC Development Team
"""

import argparse
import logging
import sys
from typing import Dict, List, Optional

from config import load_config, parse_offsets, parse_widths
from errors import AfcError
from pipeline import run_evaluate, run_preprocess, run_sweep, run_train
from synth import SynthSpec, load_synth_spec, write_synth_dataset

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s | %(levelname)s | %(message)s"
DEFAULT_SYNTH_DIR = "data/synthetic"

BANNER = """
╔═══════════════════════════════════════════════════════════╗
║        AFC - Alarm Forecasting and Classification         ║
║     LSTM alarm forecast + KNN / DT / RF alarm tagging     ║
╚═══════════════════════════════════════════════════════════╝
"""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='afc',
        description='Wind-turbine SCADA alarm forecasting and classification pipeline'
    )

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, default=None,
                        help='Path to a KEY=value pipeline config file')
    common.add_argument('--out', type=str, default=None,
                        help='Output directory (overrides OUTPUT_DIR)')
    common.add_argument('--seed', type=int, default=None,
                        help='Random seed (overrides SEED)')
    common.add_argument('--jobs', type=int, default=None,
                        help='Maximum parallel workers (overrides JOBS)')
    common.add_argument('--fw', type=str, default=None,
                        help='Forecast offset(s) 0-3, e.g. "1" or "1,2,3" (overrides FORECAST_OFFSETS)')
    common.add_argument('--verbose', action='store_true',
                        help='Debug logging (per-epoch losses)')

    sub = parser.add_subparsers(dest='command', required=True)

    synth = sub.add_parser('synth', parents=[common], help='Generate a synthetic dataset')
    synth.add_argument('--spec', type=str, default=None,
                       help='Synth spec JSON (defaults: 5 turbines x 5000 rows, 2 tags, lead 1)')

    sub.add_parser('preprocess', parents=[common], help='Build preprocess artifacts')
    sub.add_parser('train', parents=[common], help='Train regressor and classifiers')
    sub.add_parser('evaluate', parents=[common], help='Evaluate on test turbines')

    sweep = sub.add_parser('sweep', parents=[common], help='Depth / forecast-window sweeps')
    sweep.add_argument('--depths', type=str, default=None,
                       help='Layer stacks separated by ";", widths by ",", e.g. "16;32,16"')
    sweep.add_argument('--fws', type=str, default=None,
                       help='Forecast offsets to sweep, e.g. "1,2,3"')

    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, object]:
    overrides: Dict[str, object] = {}
    if args.out is not None:
        overrides['OUTPUT_DIR'] = args.out
    if args.seed is not None:
        overrides['SEED'] = str(args.seed)
    if args.jobs is not None:
        overrides['JOBS'] = str(args.jobs)
    if args.fw is not None:
        overrides['FORECAST_OFFSETS'] = parse_offsets('--fw', args.fw)
    return overrides


def _print_summary(title: str, lines: List[str]) -> None:
    print(f"\n{'='*60}")
    print(title)
    print(f"{'='*60}")
    for line in lines:
        print(line)
    print(f"{'='*60}")


def _fmt(value: Optional[float]) -> str:
    if value is None or value != value:
        return "n/a"
    return f"{value:.4f}"


def cmd_synth(args: argparse.Namespace) -> int:
    spec = load_synth_spec(args.spec) if args.spec else SynthSpec().validate()
    if args.seed is not None:
        spec.seed = args.seed
    out_dir = args.out or DEFAULT_SYNTH_DIR

    written = write_synth_dataset(spec, out_dir)
    _print_summary("Synthetic dataset", [
        f"✅ Turbines: {spec.n_turbines} x {spec.rows_per_turbine} rows, {spec.n_params} parameters",
        f"✅ Files written: {len(written)} in {out_dir}",
        f"   Config: {written['config']}",
    ])
    return 0


def cmd_preprocess(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, _overrides(args))
    prepared = run_preprocess(cfg)
    _print_summary("Preprocess", [
        f"✅ Turbines: {len(prepared.datasets)} (train {len(cfg.train_turbines)}, test {len(cfg.test_turbines)})",
        f"✅ Parameters retained: {prepared.M} (reference {cfg.reference_turbine}, "
        f"threshold {cfg.nan_threshold:.0%})",
        f"✅ Alarm codes: {prepared.K}",
        f"   Artifacts: {cfg.output_dir}",
    ])
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, _overrides(args))
    results = run_train(cfg)
    lines = []
    for fw, trained in sorted(results.items()):
        final = trained.loss_trace[-1]['loss'] if trained.loss_trace else None
        lines.append(
            f"✅ FW{fw}: {len(trained.loss_trace)} epochs, final loss {_fmt(final)}, "
            f"{trained.n_classifier_rows} classifier training windows"
        )
    _print_summary("Training", lines)
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, _overrides(args))
    reports = run_evaluate(cfg)
    lines = [
        f"{r.turbine} FW{r.fw}: recall {_fmt(r.regression_metrics.recall)}, "
        f"FPAF {_fmt(r.fpaf.fpaf_fraction)}, final {_fmt(r.final_accuracy)} ({r.chosen_model})"
        for r in reports
    ]
    _print_summary("Evaluation", lines)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    overrides = _overrides(args)
    if args.depths is not None:
        overrides['SWEEP_DEPTHS'] = [
            parse_widths('--depths', stack) for stack in args.depths.split(';') if stack.strip()
        ]
    if args.fws is not None:
        overrides['SWEEP_FWS'] = parse_offsets('--fws', args.fws)
    cfg = load_config(args.config, overrides)

    tables = run_sweep(cfg)
    lines = []
    if 'depth' in tables:
        for row in tables['depth'].itertuples():
            lines.append(f"depth {row.depth} ({row.widths}): recall {_fmt(row.recall)}")
    if 'fw' in tables:
        for row in tables['fw'].itertuples():
            lines.append(f"FW{row.fw}: recall {_fmt(row.regression_recall)}, final {_fmt(row.final_accuracy)}")
    _print_summary("Sweep", lines)
    return 0


COMMANDS = {
    'synth': cmd_synth,
    'preprocess': cmd_preprocess,
    'train': cmd_train,
    'evaluate': cmd_evaluate,
    'sweep': cmd_sweep,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one subcommand and return its exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format=LOG_FORMAT,
        force=True,
    )
    print(BANNER)

    try:
        return COMMANDS[args.command](args)
    except KeyboardInterrupt:
        print("\n⚠️  Interrupted")
        return 130
    except AfcError as e:
        logger.error(str(e))
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        print(f"❌ Internal error: {e}", file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
