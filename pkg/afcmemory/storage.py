import logging
import re
from pathlib import Path
from typing import Any, Dict, List, Optional

import duckdb
import pandas as pd

from .schema import ASSERTIONS_SCHEMA, METRICS_SCHEMA, REPORTING_VIEWS, RESULT_SCHEMAS, RUNS_SCHEMA

logger = logging.getLogger(__name__)

_TABLE_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class ResultStore:
    """
    DuckDB-based storage for scenario run results.

    Features:
    - Run, metric and assertion tables with reporting views
    - Per-scenario data tables straight from pandas DataFrames
    - Parquet export/import for sharing result sets
    """

    def __init__(self, database_path: str = ":memory:"):
        """
        Initialize the result store.

        Args:
            database_path: Path to DuckDB database file or ":memory:" for in-memory database
        """
        self.database_path = database_path

        if database_path != ":memory:":
            Path(database_path).parent.mkdir(parents=True, exist_ok=True)

        self.conn = duckdb.connect(database=database_path)
        logger.debug(f"Connected to DuckDB at {database_path}")

    def create_schema(self):
        """Create the run, metric and assertion tables."""
        for schema in RESULT_SCHEMAS:
            self.conn.execute(schema.get_create_table_sql())
            logger.debug(f"Created table schema for {schema.name}")

    def create_views(self):
        """Create database views for reporting purposes."""
        for view in REPORTING_VIEWS:
            try:
                self.conn.execute(view.get_create_view_sql())
                logger.debug(f"Created view: {view.name}")
            except Exception as e:
                logger.error(f"Error creating view {view.name}: {str(e)}")

    def list_views(self) -> List[Dict[str, Any]]:
        """List all views in the database."""
        return self.execute_query("SELECT view_name FROM duckdb_views() WHERE NOT internal AND NOT temporary")

    def list_tables(self) -> List[str]:
        rows = self.execute_query("SELECT table_name FROM duckdb_tables() ORDER BY table_name")
        return [row["table_name"] for row in rows]

    def get_view_data(self, view_name: str, limit: int = 100) -> List[Dict[str, Any]]:
        """
        Retrieve data from a specific view.

        Args:
            view_name: Name of the view to query
            limit: Maximum number of rows to return

        Returns:
            List of result rows as dictionaries
        """
        try:
            return self._query(f"SELECT * FROM {view_name} LIMIT {int(limit)}")
        except Exception as e:
            logger.error(f"Error retrieving data from view {view_name}: {str(e)}")
            return []

    def store_report(self, report, created_at: str) -> int:
        """
        Store a RunReport: one run row, its scalar metrics, its assertions and its tables.

        Args:
            report: RunReport to store
            created_at: Timestamp recorded outside the hashed payload

        Returns:
            Number of metric rows stored
        """
        run_id = f"{report.scenario}-{report.payload_hash()[:12]}"
        run_frame = pd.DataFrame([{
            "run_id": run_id,
            "scenario": report.scenario,
            "config_hash": report.config_hash,
            "payload_hash": report.payload_hash(),
            "seed": int(report.provenance.get("seed", 0)),
            "version": str(report.provenance.get("version", "")),
            "passed": report.passed,
            "created_at": created_at,
        }])
        metric_frame = pd.DataFrame(
            [{"run_id": run_id, "scenario": report.scenario, "metric": k, "value": float(v)}
             for k, v in report.scalar_metrics().items()],
            columns=METRICS_SCHEMA.get_field_names(),
        )
        assertion_frame = pd.DataFrame(
            [{"run_id": run_id, "scenario": report.scenario, "assertion": k, "passed": bool(v)}
             for k, v in report.assertions.items()],
            columns=ASSERTIONS_SCHEMA.get_field_names(),
        )

        try:
            for schema, frame in ((RUNS_SCHEMA, run_frame), (METRICS_SCHEMA, metric_frame),
                                  (ASSERTIONS_SCHEMA, assertion_frame)):
                if frame.empty:
                    continue
                self.conn.register("incoming", frame)
                self.conn.execute(f"INSERT INTO {schema.name} SELECT * FROM incoming")
                self.conn.unregister("incoming")
        except Exception as e:
            logger.error(f"Error storing run {run_id}: {str(e)}")
            raise RuntimeError(f"Failed to store run {run_id}: {str(e)}")

        for name, frame in report.tables.items():
            self.store_table(f"{report.scenario}__{name}", frame)

        logger.debug(f"Stored run {run_id} with {len(metric_frame)} metrics")
        return len(metric_frame)

    def store_table(self, name: str, frame: pd.DataFrame) -> int:
        """Replace a data table with the contents of a DataFrame."""
        if not _TABLE_NAME.match(name):
            raise ValueError(f"Invalid table name '{name}'")
        try:
            self.conn.register("incoming", frame)
            self.conn.execute(f"CREATE OR REPLACE TABLE {name} AS SELECT * FROM incoming")
            self.conn.unregister("incoming")
        except Exception as e:
            logger.error(f"Error storing table {name}: {str(e)}")
            raise RuntimeError(f"Failed to store table {name}: {str(e)}")
        return len(frame)

    def export_to_parquet(self, output_dir: str) -> bool:
        """
        Export every table to one Parquet file per table.

        Args:
            output_dir: Directory for the Parquet files

        Returns:
            True if export was successful, False otherwise
        """
        try:
            Path(output_dir).mkdir(parents=True, exist_ok=True)
            for table in self.list_tables():
                path = Path(output_dir) / f"{table}.parquet"
                self.conn.execute(f"COPY (SELECT * FROM {table}) TO '{path}' (FORMAT PARQUET)")
            logger.info(f"Exported result tables to {output_dir}")
            return True
        except Exception as e:
            logger.error(f"Error exporting to Parquet: {str(e)}")
            return False

    def import_from_parquet(self, input_path: str, table: str) -> int:
        """
        Import a Parquet file into a table, replacing it.

        Returns:
            Number of records imported, 0 on failure
        """
        try:
            if not _TABLE_NAME.match(table):
                raise ValueError(f"Invalid table name '{table}'")
            self.conn.execute(f"CREATE OR REPLACE TABLE {table} AS SELECT * FROM read_parquet('{input_path}')")
            result = self.conn.execute(f"SELECT COUNT(*) FROM {table}").fetchone()
            count = result[0] if result else 0
            logger.info(f"Imported {count} records from {input_path}")
            return count
        except Exception as e:
            logger.error(f"Error importing from Parquet: {str(e)}")
            return 0

    def _query(self, query: str, parameters: Optional[Dict[str, Any]] = None) -> List[Dict[str, Any]]:
        result = self.conn.execute(query, parameters if parameters else {})
        columns = [col[0] for col in result.description]
        return [dict(zip(columns, row)) for row in result.fetchall()]

    def execute_query(self, query: str, parameters: Optional[Dict[str, Any]] = None) -> List[Dict[str, Any]]:
        """
        Execute a SQL query and return results as a list of dictionaries.

        Args:
            query: SQL query to execute
            parameters: Query parameters

        Returns:
            List of result rows as dictionaries, empty on error
        """
        try:
            return self._query(query, parameters)
        except Exception as e:
            logger.error(f"Error executing query: {str(e)}")
            logger.error(f"Query: {query}")
            logger.error(f"Parameters: {parameters}")
            return []

    def close(self):
        """Close the database connection."""
        if hasattr(self, "conn") and self.conn:
            self.conn.close()
            self.conn = None
            logger.info("Database connection closed")

    def __enter__(self):
        """Enable use as a context manager."""
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        """Close connection when exiting context."""
        self.close()
