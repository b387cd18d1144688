#!/usr/bin/env python3
"""
CFFL Simulator - Main Entry Point

Runs collaborative fair federated learning experiments against the
Standalone, FedAvg and DSSGD baselines and scores collaborative fairness.

Usage:
    python -m src.main run CONFIG [--seed N] [--out DIR] [--frameworks CFFL,FedAvg]
    python -m src.main fairness --standalone DIR RUN_DIR [RUN_DIR ...]
    python -m src.main plot-data RUN_DIR
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from datetime import datetime
from pathlib import Path
from typing import List, Optional, Tuple

try:
    from .config import FRAMEWORKS, load_config
    from .errors import CfflError, ConfigError, DataIOError
    from .harness import SUMMARY_FILE, emit_plot_data, recompute_fairness, run_experiment
except ImportError as e:
    print(f"\n❌ Error: {e}")
    print("\nDid you forget to activate the virtual environment?")
    print("Try running: source venv/bin/activate\n")
    sys.exit(1)


def setup_logging(log_dir: Path, label: str, verbose: bool = False) -> Tuple[logging.Logger, Path]:
    """Configure logging to file and console."""
    log_dir.mkdir(parents=True, exist_ok=True)

    today_str = datetime.now().strftime('%Y-%m-%d')
    log_path = log_dir / f"{today_str}_{label}.log"

    file_formatter = logging.Formatter(
        "%(asctime)s | %(levelname)s | %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S"
    )
    console_formatter = logging.Formatter("%(message)s")

    file_handler = logging.FileHandler(log_path, encoding="utf-8")
    file_handler.setLevel(logging.DEBUG if verbose else logging.INFO)
    file_handler.setFormatter(file_formatter)

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(logging.DEBUG if verbose else logging.WARNING)
    console_handler.setFormatter(console_formatter)

    logger = logging.getLogger()
    if logger.handlers:
        logger.handlers = []

    logger.setLevel(logging.DEBUG)
    logger.addHandler(file_handler)
    logger.addHandler(console_handler)

    # Suppress noisy loggers
    logging.getLogger("numexpr").setLevel(logging.WARNING)

    return logger, log_path


def print_header(title: str):
    """Print the simulator header."""
    print("\n" + "=" * 70)
    print(f"  CFFL Simulator - {title}")
    print(f"  Date: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    print("=" * 70 + "\n")


def print_progress(current: int, total: int, label: str):
    """Print progress update."""
    pct = (current / total) * 100 if total else 100.0
    bar_len = 30
    filled = int(bar_len * current / total) if total else bar_len
    bar = "█" * filled + "░" * (bar_len - filled)
    print(f"\r  [{bar}] {pct:5.1f}% | {current}/{total} | {label:20}", end="", flush=True)


def print_summary(run_dirs: List[Path]):
    """Print fairness and best accuracy for every run directory."""
    print("\n\n" + "=" * 70)
    print("  RESULTS")
    print("=" * 70)
    print(f"\n  {'Run':40} {'Fairness':>10} {'Max acc':>10}  Evicted")
    print("  " + "-" * 66)
    for run_dir in run_dirs:
        with open(run_dir / SUMMARY_FILE, encoding="utf-8") as f:
            summary = json.load(f)
        fair = summary["fairness"]
        fair_str = f"{fair:10.4f}" if fair is not None else f"{'n/a':>10}"
        best = summary["max_accuracy"]
        best_str = f"{best:10.4f}" if best is not None else f"{'n/a':>10}"
        label = f"seed {summary['seed']} / {summary['framework']}"
        print(f"  {label:40} {fair_str} {best_str}  {summary['evicted_participants'] or '-'}")
    print("\n" + "=" * 70 + "\n")


def _parse_frameworks(value: Optional[str]) -> Optional[List[str]]:
    if value is None:
        return None
    names = [f.strip() for f in value.split(",") if f.strip()]
    unknown = [f for f in names if f not in FRAMEWORKS]
    if unknown:
        raise ConfigError(f"Unknown frameworks {unknown}; choose from {list(FRAMEWORKS)}")
    return names


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    if args.out is not None:
        overrides["output_dir"] = args.out
    frameworks = _parse_frameworks(args.frameworks)
    if frameworks is not None:
        overrides["frameworks"] = frameworks
    if overrides:
        cfg = replace(cfg, **overrides)

    logger, log_path = setup_logging(Path(cfg.output_dir) / "logs", cfg.name, args.verbose)

    print_header(cfg.name)
    print(f"  Log file: {log_path}")
    print(f"  Dataset: {cfg.dataset} | Scenario: {cfg.scenario} | Participants: {cfg.participant_count}"
          f"{f' + {cfg.free_riders} free rider(s)' if cfg.free_riders else ''}")
    print(f"  Frameworks: Standalone, {', '.join(f for f in cfg.frameworks if f != 'Standalone')}")
    print(f"  Rounds: {cfg.rounds} | Seeds: {cfg.seeds}\n")

    def progress(framework: str, seed: int, done: int, total: int):
        print_progress(done, total, f"seed {seed} {framework}")

    run_dirs = run_experiment(cfg, progress_callback=progress)
    print_summary(run_dirs)
    logger.info(f"Experiment {cfg.name} complete: {len(run_dirs)} runs written")
    return 0


def cmd_fairness(args) -> int:
    for run_dir in args.run_dirs:
        report = recompute_fairness(args.standalone, run_dir)
        print(f"{run_dir}\t{report.coefficient!r}")
    return 0


def cmd_plot_data(args) -> int:
    paths = emit_plot_data(args.run_dir)
    for path in paths:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Collaborative Fair Federated Learning simulator")
    parser.add_argument(
        "--verbose", "-v",
        action="store_true",
        help="Enable verbose logging"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run an experiment from a YAML config")
    run.add_argument("config", type=Path, help="Experiment config (YAML)")
    run.add_argument("--seed", "-s", type=int, default=None, help="Run a single seed instead of the config's seeds")
    run.add_argument("--out", "-o", type=str, default=None, help="Output directory (default: config output_dir)")
    run.add_argument(
        "--frameworks", "-f",
        type=str,
        default=None,
        help="Comma-separated frameworks to run, e.g. CFFL,FedAvg (Standalone always runs)"
    )
    run.set_defaults(handler=cmd_run)

    fair = sub.add_parser("fairness", help="Recompute fairness from finished runs")
    fair.add_argument("--standalone", type=Path, required=True, help="Standalone run directory")
    fair.add_argument("run_dirs", type=Path, nargs="+", help="Run directories to score")
    fair.set_defaults(handler=cmd_fairness)

    plot = sub.add_parser("plot-data", help="Write per-participant accuracy series")
    plot.add_argument("run_dir", type=Path, help="Run directory holding metrics.csv")
    plot.set_defaults(handler=cmd_plot_data)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main entry point.

    Exit codes: 0 success, 1 configuration error or bad arguments, 2 protocol
    or numerical error, 3 data or I/O error.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # --help exits 0; usage errors are bad invocations
        return ConfigError.exit_code if e.code else 0
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        return args.handler(args)
    except CfflError as e:
        logging.getLogger(__name__).error(f"{type(e).__name__}: {e}")
        print(f"\n❌ {type(e).__name__}: {e}\n", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"\n❌ I/O error: {e}\n", file=sys.stderr)
        return DataIOError.exit_code


if __name__ == "__main__":
    sys.exit(main())
