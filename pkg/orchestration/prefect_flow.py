from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from prefect import flow, task, get_run_logger

from afcmemory.config import SCENARIOS, Config
from afcmemory.reporter import ReportGenerator, RunReport
from afcmemory.scenarios import run_scenario
from afcmemory.storage import ResultStore


@task
def run_scenario_task(name: str, config: Config) -> RunReport:
    """
    Task to run one scenario and write its outputs.

    Args:
        name: Scenario id
        config: Run configuration

    Returns:
        The scenario RunReport
    """
    logger = get_run_logger()
    logger.info(f"Running scenario {name}")

    report = run_scenario(name, config)
    path = report.write(config.out_dir)

    logger.info(f"Scenario {name} written to {path} (passed: {report.passed})")
    return report


@task
def store_results(reports: list, config: Config) -> int:
    """
    Task to load scenario reports into DuckDB and export them as Parquet.

    Args:
        reports: Completed RunReports
        config: Run configuration

    Returns:
        Number of stored metric rows
    """
    logger = get_run_logger()
    logger.info(f"Storing {len(reports)} runs to {config.database_path}")

    created_at = datetime.now(timezone.utc).isoformat()
    total_stored = 0
    with ResultStore(database_path=config.database_path) as store:
        store.create_schema()
        for report in reports:
            total_stored += store.store_report(report, created_at)
        store.create_views()
        store.export_to_parquet(str(Path(config.out_dir) / "parquet"))

    logger.info(f"Stored {total_stored} metrics to database")
    return total_stored


@task
def generate_report(config: Config) -> str:
    """
    Task to generate the suite report from stored runs.

    Args:
        config: Run configuration

    Returns:
        Path to the generated report file
    """
    logger = get_run_logger()
    logger.info("Generating suite report")

    report_path = Path(config.out_dir) / "suite_report.json"
    with ResultStore(database_path=config.database_path) as store:
        success = ReportGenerator(store).save_report_to_json(str(report_path))
    if success:
        logger.info(f"Suite report saved to {report_path}")
    else:
        logger.error(f"Failed to save report to {report_path}")

    return str(report_path)


@flow(name="AFC Memory Reproduction Suite", log_prints=True)
def afc_reproduction_flow(
    seed: int = 42,
    preset: str = "measured",
    out_dir: str = "./results",
    database_path: str = "./results/afc.duckdb",
    config_path: Optional[str] = None
) -> dict:
    """
    Run every scenario concurrently and collect the results.

    Args:
        seed: Base seed; each scenario derives its own
        preset: Parameter preset (ideal or measured)
        out_dir: Output directory
        database_path: DuckDB results database
        config_path: Optional JSON configuration document

    Returns:
        Dictionary with per-scenario pass flags and the report path
    """
    logger = get_run_logger()
    logger.info("Starting AFC memory reproduction suite with Prefect")

    overrides = {"preset": preset, "seed": seed, "out_dir": out_dir, "database_path": database_path}
    config = Config.from_json(config_path, overrides) if config_path else Config.from_dict({}, overrides)

    futures = [run_scenario_task.submit(name, config) for name in SCENARIOS]
    reports = [future.result() for future in futures]
    total_stored = store_results(reports, config)
    report_path = generate_report(config)

    logger.info("Suite completed")

    return {
        "passed": {report.scenario: report.passed for report in reports},
        "stored_metrics": total_stored,
        "report_path": report_path
    }
