from afcmemory.schema import (
    ASSERTIONS_SCHEMA,
    METRICS_SCHEMA,
    REPORTING_VIEWS,
    RESULT_SCHEMAS,
    RUNS_SCHEMA,
    FieldDefinition,
    TableSchema,
    ViewDefinition,
)


class TestSchema:
    """Tests for the schema module."""

    def test_field_definition(self):
        """Test field definition class."""
        field = FieldDefinition(name="value", data_type="DOUBLE", description="Metric value")

        # Test string representation
        assert str(field) == "value DOUBLE,    -- Metric value"

        # Test attributes
        assert field.name == "value"
        assert field.data_type == "DOUBLE"

    def test_table_schema(self):
        """Test table schema class."""
        schema = TableSchema(
            name="test_table",
            description="Test table description",
            fields=[
                FieldDefinition("run_id", "VARCHAR", "Run reference"),
                FieldDefinition("value", "DOUBLE", "Value"),
            ]
        )

        # Test get_field_names method
        assert schema.get_field_names() == ["run_id", "value"]

        # Test get_create_table_sql method
        sql = schema.get_create_table_sql()
        assert "CREATE TABLE IF NOT EXISTS test_table" in sql
        assert "run_id VARCHAR" in sql
        assert "value DOUBLE" in sql

    def test_view_definition(self):
        """Test view definition class."""
        view = ViewDefinition(name="test_view", description="Test view", query="SELECT 1 AS one")
        assert view.get_create_view_sql() == "CREATE OR REPLACE VIEW test_view AS SELECT 1 AS one"

    def test_result_schemas(self):
        """Test the run, metric and assertion tables."""
        assert [schema.name for schema in RESULT_SCHEMAS] == ["runs", "metrics", "assertions"]

        # Every table links back to its run
        for schema in RESULT_SCHEMAS:
            assert schema.get_field_names()[0] == "run_id"

        assert "payload_hash" in RUNS_SCHEMA.get_field_names()
        assert METRICS_SCHEMA.get_field_names() == ["run_id", "scenario", "metric", "value"]
        assert ASSERTIONS_SCHEMA.get_field_names() == ["run_id", "scenario", "assertion", "passed"]

    def test_reporting_views(self):
        """Test the reporting view definitions."""
        names = [view.name for view in REPORTING_VIEWS]
        assert names == ["latest_metrics", "assertion_summary"]

        for view in REPORTING_VIEWS:
            assert view.description
            assert "SELECT" in view.query
