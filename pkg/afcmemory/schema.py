import logging
from dataclasses import dataclass
from typing import List

logger = logging.getLogger(__name__)


@dataclass
class FieldDefinition:
    """Definition of a database field with type and description."""
    name: str
    data_type: str
    description: str

    def __str__(self) -> str:
        """Return the field definition as a SQL column definition string."""
        return f"{self.name} {self.data_type},    -- {self.description}"


@dataclass
class TableSchema:
    """Definition of a database table schema."""
    name: str
    fields: List[FieldDefinition]
    description: str

    def get_create_table_sql(self) -> str:
        """Generate the SQL CREATE TABLE statement for this schema."""
        field_definitions = [str(field) for field in self.fields]
        field_sql = "\n                ".join(field_definitions)

        return f"""
            CREATE TABLE IF NOT EXISTS {self.name} (
                {field_sql}
            )
        """

    def get_field_names(self) -> List[str]:
        """Get all field names in this schema."""
        return [field.name for field in self.fields]


@dataclass
class ViewDefinition:
    """Definition of a database view for reporting."""
    name: str
    query: str
    description: str

    def get_create_view_sql(self) -> str:
        """Generate the SQL CREATE VIEW statement for this view."""
        return f"CREATE OR REPLACE VIEW {self.name} AS {self.query}"


RUNS_SCHEMA = TableSchema(
    name="runs",
    description="One row per scenario run",
    fields=[
        FieldDefinition("run_id", "VARCHAR", "Payload hash prefix plus scenario"),
        FieldDefinition("scenario", "VARCHAR", "Scenario id"),
        FieldDefinition("config_hash", "VARCHAR", "SHA-256 of the run configuration"),
        FieldDefinition("payload_hash", "VARCHAR", "SHA-256 of the report payload"),
        FieldDefinition("seed", "BIGINT", "Base seed"),
        FieldDefinition("version", "VARCHAR", "Package version"),
        FieldDefinition("passed", "BOOLEAN", "All scenario assertions passed"),
        FieldDefinition("created_at", "VARCHAR", "UTC timestamp, outside the hashed payload"),
    ]
)

METRICS_SCHEMA = TableSchema(
    name="metrics",
    description="Scalar metrics reported by each run",
    fields=[
        FieldDefinition("run_id", "VARCHAR", "Run reference"),
        FieldDefinition("scenario", "VARCHAR", "Scenario id"),
        FieldDefinition("metric", "VARCHAR", "Metric name"),
        FieldDefinition("value", "DOUBLE", "Metric value"),
    ]
)

ASSERTIONS_SCHEMA = TableSchema(
    name="assertions",
    description="Scenario-internal acceptance checks",
    fields=[
        FieldDefinition("run_id", "VARCHAR", "Run reference"),
        FieldDefinition("scenario", "VARCHAR", "Scenario id"),
        FieldDefinition("assertion", "VARCHAR", "Check name"),
        FieldDefinition("passed", "BOOLEAN", "Check outcome"),
    ]
)

RESULT_SCHEMAS = [RUNS_SCHEMA, METRICS_SCHEMA, ASSERTIONS_SCHEMA]

REPORTING_VIEWS = [
    ViewDefinition(
        name="latest_metrics",
        description="Metrics of the most recent run of each scenario",
        query="""
        SELECT m.scenario, m.metric, m.value
        FROM metrics m
        JOIN (
            SELECT scenario, arg_max(run_id, created_at) AS run_id
            FROM runs
            GROUP BY scenario
        ) latest ON m.run_id = latest.run_id
        ORDER BY m.scenario, m.metric
        """
    ),
    ViewDefinition(
        name="assertion_summary",
        description="Passed and failed checks per scenario",
        query="""
        SELECT
            scenario,
            COUNT(*) AS checks,
            SUM(CASE WHEN passed THEN 1 ELSE 0 END) AS passed,
            SUM(CASE WHEN passed THEN 0 ELSE 1 END) AS failed
        FROM assertions
        GROUP BY scenario
        ORDER BY scenario
        """
    ),
]
