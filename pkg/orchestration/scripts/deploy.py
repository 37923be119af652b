import sys
import os

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../../')))

from orchestration.prefect_flow import afc_reproduction_flow


if __name__ == "__main__":
    afc_reproduction_flow.serve(
        name="afc-reproduction-suite",
        cron="0 3 * * *",  # Nightly at 03:00
        parameters={
            "seed": 42,
            "preset": "measured",
            "out_dir": "./results",
            "database_path": "./results/afc.duckdb"
        },
        description="Seeded reproduction of the AFC memory scenarios with DuckDB/Parquet results",
        tags=["simulation", "afc-memory"],
    )
