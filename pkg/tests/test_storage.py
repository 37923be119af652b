import pandas as pd
import pytest

from afcmemory.reporter import RunReport
from afcmemory.schema import REPORTING_VIEWS, RESULT_SCHEMAS
from afcmemory.storage import ResultStore


def make_report(scenario="g2_run", g2=14.2, passed=True) -> RunReport:
    report = RunReport(scenario=scenario, config_hash="abc123", provenance={"seed": 42, "version": "0.1.0"})
    report.metrics.update({"g2_bypass": g2, "coincidences_bypass": 300, "note": "text", "missing": float("nan")})
    report.assertions.update({"bypass_matches_model": passed, "nonclassical": True})
    report.tables["g2"] = pd.DataFrame({"arm": ["bypass", "storage"], "g2": [g2, 18.0]})
    return report


class TestResultStore:
    """Tests for the ResultStore class."""

    def setup_method(self):
        """Set up test fixtures."""
        # Use in-memory database for testing
        self.store = ResultStore(":memory:")
        self.store.create_schema()

    def teardown_method(self):
        """Tear down test fixtures."""
        self.store.close()

    def test_create_schema(self):
        """Test creating the database schema."""
        tables = self.store.list_tables()
        for schema in RESULT_SCHEMAS:
            assert schema.name in tables

        # Check that all columns are created
        result = self.store.execute_query(
            "SELECT column_name FROM information_schema.columns WHERE table_name = 'runs' ORDER BY ordinal_position"
        )
        column_names = [row["column_name"] for row in result]
        assert column_names == [field.name for field in RESULT_SCHEMAS[0].fields]

    def test_store_report(self):
        """Test storing a run with its metrics, assertions and tables."""
        report = make_report()
        count = self.store.store_report(report, "2026-01-01T00:00:00+00:00")

        # Only finite numeric metrics are stored
        assert count == 2

        runs = self.store.execute_query("SELECT * FROM runs")
        assert len(runs) == 1
        assert runs[0]["run_id"] == f"g2_run-{report.payload_hash()[:12]}"
        assert runs[0]["seed"] == 42
        assert runs[0]["passed"] is True

        metrics = self.store.execute_query("SELECT metric, value FROM metrics ORDER BY metric")
        assert metrics == [{"metric": "coincidences_bypass", "value": 300.0},
                           {"metric": "g2_bypass", "value": 14.2}]

        assertions = self.store.execute_query("SELECT assertion FROM assertions")
        assert len(assertions) == 2

        # Report tables are stored per scenario
        assert "g2_run__g2" in self.store.list_tables()
        rows = self.store.execute_query("SELECT arm FROM g2_run__g2 ORDER BY arm")
        assert [row["arm"] for row in rows] == ["bypass", "storage"]

    def test_create_views(self):
        """Test creating views for reporting."""
        self.store.store_report(make_report(), "2026-01-01T00:00:00+00:00")
        self.store.create_views()

        view_names = [row["view_name"] for row in self.store.list_views()]
        for view in REPORTING_VIEWS:
            assert view.name in view_names

    def test_latest_metrics_view(self):
        """Test that the latest run of a scenario wins."""
        self.store.store_report(make_report(g2=13.0), "2026-01-01T00:00:00+00:00")
        self.store.store_report(make_report(g2=15.0), "2026-01-02T00:00:00+00:00")
        self.store.create_views()

        rows = self.store.get_view_data("latest_metrics")
        values = {row["metric"]: row["value"] for row in rows}
        assert values["g2_bypass"] == 15.0

    def test_assertion_summary_view(self):
        """Test passed and failed counts per scenario."""
        self.store.store_report(make_report(passed=False), "2026-01-01T00:00:00+00:00")
        self.store.create_views()

        rows = self.store.get_view_data("assertion_summary")
        assert len(rows) == 1
        assert rows[0]["scenario"] == "g2_run"
        assert rows[0]["checks"] == 2
        assert rows[0]["failed"] == 1

    def test_store_table_invalid_name(self):
        """Test rejection of unsafe table names."""
        with pytest.raises(ValueError, match="Invalid table name"):
            self.store.store_table("bad-name; DROP TABLE runs", pd.DataFrame({"a": [1]}))

    def test_get_view_data_error(self):
        """Test handling of a missing view."""
        assert self.store.get_view_data("missing_view") == []

    def test_execute_query_error(self):
        """Test that query errors return an empty result."""
        assert self.store.execute_query("SELECT * FROM missing_table") == []

    def test_export_and_import_parquet(self, tmp_path):
        """Test the Parquet round trip of a stored run."""
        self.store.store_report(make_report(), "2026-01-01T00:00:00+00:00")
        assert self.store.export_to_parquet(str(tmp_path)) is True
        assert (tmp_path / "metrics.parquet").exists()
        assert (tmp_path / "g2_run__g2.parquet").exists()

        with ResultStore(":memory:") as other:
            count = other.import_from_parquet(str(tmp_path / "metrics.parquet"), "metrics")
            assert count == 2

    def test_import_missing_file(self, tmp_path):
        """Test that a failed import returns zero."""
        assert self.store.import_from_parquet(str(tmp_path / "missing.parquet"), "metrics") == 0

    def test_file_database(self, tmp_path):
        """Test a file-backed database in a new directory."""
        path = tmp_path / "nested" / "afc.duckdb"
        with ResultStore(str(path)) as store:
            store.create_schema()
            store.store_report(make_report(), "2026-01-01T00:00:00+00:00")
        assert path.exists()

        with ResultStore(str(path)) as store:
            assert len(store.execute_query("SELECT * FROM runs")) == 1
