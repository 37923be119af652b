"""
AFC quantum memory reproduction harness entry point.
"""
import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional, Sequence

import pandas as pd

from .config import PRESET_ALIASES, PRESETS, SCENARIOS, Config
from .reporter import ReportGenerator, RunReport
from .scenarios import reconstruct_count_table, run_all
from .storage import ResultStore

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    handlers=[logging.StreamHandler(sys.stdout)]
)
logger = logging.getLogger(__name__)

COMMANDS = {
    "echo": "echo_trace",
    "polsweep": "pol_sweep",
    "visibility": "visibility_scan",
    "tomo": "tomography",
    "g2": "g2_run",
    "calibrate": "calibrate",
}

EXIT_OK = 0
EXIT_ASSERTION_FAILED = 1
EXIT_SCENARIO_ERROR = 2


def store_reports(reports: List[RunReport], config: Config, created_at: str) -> str:
    """
    Load reports into the DuckDB store, export Parquet and write the suite report.

    Args:
        reports: Completed scenario reports
        config: Run configuration (database and output locations)
        created_at: Timestamp shared by the stored runs

    Returns:
        Path of the suite report JSON
    """
    out_dir = Path(config.out_dir)
    with ResultStore(database_path=config.database_path) as store:
        store.create_schema()
        for report in reports:
            stored = store.store_report(report, created_at)
            logger.debug(f"Stored {stored} metrics for {report.scenario}")
        store.create_views()

        if not store.export_to_parquet(str(out_dir / "parquet")):
            logger.warning("Parquet export failed")

        report_path = out_dir / "suite_report.json"
        if not ReportGenerator(store).save_report_to_json(str(report_path)):
            logger.error(f"Failed to save suite report to {report_path}")
    return str(report_path)


def run_suite(config: Config, scenarios: Sequence[str], workers: int = 1, persist: bool = False) -> int:
    """
    Execute scenarios and write their outputs.

    Args:
        config: Run configuration
        scenarios: Scenario ids to run
        workers: Parallel scenario threads
        persist: Also load the results into DuckDB, export Parquet and write the suite report

    Returns:
        Process exit code: 0 if every assertion passed, 1 if any failed, 2 on a scenario error
    """
    logger.info(f"Starting AFC memory harness: {', '.join(scenarios)} (seed {config.seed}, preset {config.preset})")

    # Step 1: Run the scenarios
    try:
        reports = run_all(config, scenarios, workers)
    except RuntimeError as e:
        logger.error(str(e))
        return EXIT_SCENARIO_ERROR

    # Step 2: Write per-scenario summaries, tables and plot data
    created_at = datetime.now(timezone.utc).isoformat()
    for report in reports:
        report.write(config.out_dir)
    config.save(str(Path(config.out_dir) / "config.json"))

    # Step 3: Store results and generate the suite report
    if persist:
        report_path = store_reports(reports, config, created_at)
        logger.info(f"Suite report saved to {report_path}")

    failed = {r.scenario: r.failed_assertions for r in reports if not r.passed}
    if failed:
        logger.error(f"Failed checks: {failed}")
        return EXIT_ASSERTION_FAILED

    logger.info("All scenario checks passed")
    return EXIT_OK


def run_count_table(config: Config, counts_path: str) -> int:
    """
    Reconstruct density matrices from a measured count table and write the report.

    Returns:
        Process exit code, as for run_suite
    """
    logger.info(f"Reconstructing count table {counts_path}")

    # Step 1: Read the table and reconstruct
    try:
        frame = pd.read_csv(counts_path)
        report = reconstruct_count_table(config, frame)
    except (OSError, RuntimeError, ValueError) as e:
        logger.error(str(e))
        return EXIT_SCENARIO_ERROR

    # Step 2: Write the summary, tables and configuration
    report.write(config.out_dir)
    config.save(str(Path(config.out_dir) / "config.json"))

    if not report.passed:
        logger.error(f"Failed checks: {report.failed_assertions}")
        return EXIT_ASSERTION_FAILED
    logger.info("All reconstruction checks passed")
    return EXIT_OK


def build_config(args: argparse.Namespace) -> Config:
    """Layer the JSON document, the environment and command-line options, in that order."""
    data = {}
    if args.config:
        with open(args.config, "r") as f:
            data = json.load(f)

    overrides = {}
    if args.preset:
        overrides["preset"] = args.preset
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out_dir:
        overrides["out_dir"] = args.out_dir
    if args.database:
        overrides["database_path"] = args.database
    return Config.from_dict(data, overrides)


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse command line arguments."""
    common = argparse.ArgumentParser(add_help=False)

    common.add_argument(
        "--seed",
        type=int,
        default=None,
        help="Base seed (default: 42 or the config file value)"
    )

    common.add_argument(
        "--out-dir",
        type=str,
        default=None,
        help="Output directory (default: ./results)"
    )

    common.add_argument(
        "--preset",
        type=str,
        choices=PRESETS + tuple(PRESET_ALIASES),
        default=None,
        help="Parameter preset; paper is an alias of measured (default: ideal)"
    )

    common.add_argument(
        "--config",
        type=str,
        default=None,
        help="JSON configuration document (default: none, all defaults)"
    )

    common.add_argument(
        "--database",
        type=str,
        default=None,
        help="DuckDB results database (default: ./results/afc.duckdb)"
    )

    common.add_argument(
        "--workers",
        type=int,
        default=1,
        help="Scenarios run in parallel by 'all' (default: 1)"
    )

    common.add_argument(
        "--verbose",
        action="store_true",
        help="Log per-setting detail at DEBUG level"
    )

    parser = argparse.ArgumentParser(description="AFC Quantum Memory Reproduction Harness")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command, scenario_id in COMMANDS.items():
        subparser = subparsers.add_parser(command, parents=[common], help=f"Run the {scenario_id} scenario")
        if command == "tomo":
            subparser.add_argument(
                "--counts",
                type=str,
                default=None,
                help="Reconstruct a (basis, outcome, counts) CSV table instead of simulating"
            )
    subparsers.add_parser("all", parents=[common], help="Run every scenario and store the results")

    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point."""
    args = parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        config = build_config(args)
    except (OSError, ValueError) as e:
        logger.error(f"Invalid configuration: {str(e)}")
        return EXIT_SCENARIO_ERROR

    if args.command == "all":
        return run_suite(config, SCENARIOS, workers=args.workers, persist=True)
    if args.command == "tomo" and args.counts:
        return run_count_table(config, args.counts)
    return run_suite(config, [COMMANDS[args.command]])


if __name__ == "__main__":
    sys.exit(main())
