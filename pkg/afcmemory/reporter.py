import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List

import numpy as np
import pandas as pd

from .config import Config, canonical_json

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.json"


def json_safe(value: Any) -> Any:
    """Convert numpy scalars and arrays to plain JSON types; non-finite floats become None."""
    if isinstance(value, dict):
        return {str(k): json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return json_safe(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def _frame_records(frame: pd.DataFrame) -> Dict[str, Any]:
    return {"columns": list(frame.columns), "rows": json_safe(frame.to_numpy().tolist())}


@dataclass
class RunReport:
    """
    Result of one scenario run.

    Attributes:
        scenario: Scenario id
        config_hash: Hash of the configuration that produced the run
        metrics: Named results; scalars and small nested structures
        tables: Named data tables written as CSV
        plots: Named (x, y, yerr) series written as plot CSVs
        assertions: Scenario-internal acceptance checks
        provenance: Seed, preset and package version
        assumptions: Modelling choices worth recording next to the numbers
    """
    scenario: str
    config_hash: str
    metrics: Dict[str, Any] = field(default_factory=dict)
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    plots: Dict[str, pd.DataFrame] = field(default_factory=dict)
    assertions: Dict[str, bool] = field(default_factory=dict)
    provenance: Dict[str, Any] = field(default_factory=dict)
    assumptions: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(bool(v) for v in self.assertions.values())

    @property
    def failed_assertions(self) -> List[str]:
        return [name for name, ok in self.assertions.items() if not ok]

    def scalar_metrics(self) -> Dict[str, float]:
        """Finite numeric metrics, booleans as 0/1."""
        scalars = {}
        for name, value in self.metrics.items():
            if isinstance(value, (bool, np.bool_, int, float, np.integer, np.floating)):
                value = float(value)
                if math.isfinite(value):
                    scalars[name] = value
        return scalars

    def payload(self) -> Dict[str, Any]:
        """Everything that is hashed: identical configurations give identical payloads."""
        return json_safe({
            "scenario": self.scenario,
            "config_hash": self.config_hash,
            "provenance": self.provenance,
            "metrics": self.metrics,
            "assertions": self.assertions,
            "passed": self.passed,
            "assumptions": self.assumptions,
            "tables": {name: _frame_records(frame) for name, frame in sorted(self.tables.items())},
            "plots": {name: _frame_records(frame) for name, frame in sorted(self.plots.items())},
        })

    def payload_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.payload()).encode("utf-8")).hexdigest()

    def write(self, out_dir: str) -> Path:
        """
        Write summary.json, one CSV per table and one plot_<name>.csv per plot.

        Args:
            out_dir: Root output directory; files go to <out_dir>/<scenario>/

        Returns:
            Path of the scenario directory
        """
        scenario_dir = Path(out_dir) / self.scenario
        scenario_dir.mkdir(parents=True, exist_ok=True)

        summary = {
            "payload": self.payload(),
            "payload_hash": self.payload_hash(),
            "created_at": datetime.now(timezone.utc).isoformat(),
        }
        with open(scenario_dir / SUMMARY_FILE, "w") as f:
            json.dump(summary, f, indent=2, sort_keys=True)

        for name, frame in self.tables.items():
            frame.to_csv(scenario_dir / f"{name}.csv", index=False)
        for name, frame in self.plots.items():
            frame.to_csv(scenario_dir / f"plot_{name}.csv", index=False)

        logger.info(f"Wrote {self.scenario} results to {scenario_dir}")
        return scenario_dir


def verify_report(summary_path: str, config: Config) -> Dict[str, Any]:
    """
    Check a written summary against a configuration.

    Args:
        summary_path: Path to a summary.json
        config: Configuration the run is claimed to come from

    Returns:
        The stored payload

    Raises:
        ValueError: On a configuration or payload hash mismatch
    """
    with open(summary_path, "r") as f:
        summary = json.load(f)

    payload = summary["payload"]
    if payload.get("config_hash") != config.config_hash():
        raise ValueError("config hash mismatch")
    recomputed = hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()
    if recomputed != summary.get("payload_hash"):
        raise ValueError("payload hash mismatch")
    return payload


class ReportGenerator:
    """
    Generates a suite-level report from the result store.

    Features:
    - SQL-based reporting over the run tables
    - Latest metrics per scenario
    - Assertion pass/fail summary
    """

    def __init__(self, store):
        """
        Initialize the report generator.

        Args:
            store: ResultStore holding the runs
        """
        self.store = store

    def get_assertion_summary(self) -> List[Dict[str, Any]]:
        """Checks, passes and failures per scenario."""
        result = self.store.get_view_data("assertion_summary")
        if not result:
            logger.warning("No assertions recorded")
        return result

    def get_failed_assertions(self) -> List[Dict[str, Any]]:
        query = """
        SELECT scenario, assertion
        FROM assertions
        WHERE NOT passed
        ORDER BY scenario, assertion
        """
        return self.store.execute_query(query)

    def get_latest_metrics(self, scenario: str) -> Dict[str, float]:
        """
        Metrics of the most recent run of a scenario.

        Args:
            scenario: Scenario id

        Returns:
            Metric name to value
        """
        query = """
        SELECT metric, value
        FROM latest_metrics
        WHERE scenario = $scenario
        """
        result = self.store.execute_query(query, {"scenario": scenario})
        if not result:
            logger.warning(f"No metrics found for scenario {scenario}")
        return {row["metric"]: row["value"] for row in result}

    def generate_full_report(self) -> Dict[str, Any]:
        """
        Generate a complete report over every stored scenario.

        Returns:
            Dictionary with assertion summary, failures and latest metrics
        """
        scenarios = [row["scenario"] for row in self.store.execute_query(
            "SELECT DISTINCT scenario FROM runs ORDER BY scenario"
        )]
        summary = self.get_assertion_summary()
        report = {
            "scenarios": scenarios,
            "all_passed": all(row["failed"] == 0 for row in summary),
            "assertion_summary": summary,
            "failed_assertions": self.get_failed_assertions(),
            "metrics": {scenario: self.get_latest_metrics(scenario) for scenario in scenarios},
        }

        logger.debug("Generated suite report")
        return json_safe(report)

    def save_report_to_json(self, output_path: str) -> bool:
        """
        Generate and save the suite report to a JSON file.

        Args:
            output_path: Path to save the JSON report

        Returns:
            True if the report was successfully saved, False otherwise
        """
        try:
            report = self.generate_full_report()

            output_dir = os.path.dirname(output_path)
            if output_dir:
                Path(output_dir).mkdir(parents=True, exist_ok=True)

            with open(output_path, "w") as f:
                json.dump(report, f, indent=2)

            logger.debug(f"Report saved to {output_path}")
            return True

        except Exception as e:
            logger.error(f"Failed to save report: {str(e)}")
            return False
