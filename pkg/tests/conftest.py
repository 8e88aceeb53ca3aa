from __future__ import annotations

import pytest

from fhirtwin.pipeline import Pipeline, build_config, default_data_dir

TABLE3_TEXT = (
    "65-year-old male with history of hypertension and type 2 diabetes. "
    "BP 145/92. Started Lisinopril 10mg daily."
)
FIG1_TEXT = "Patient has diabetes. Started Metformin 500mg twice daily."


@pytest.fixture(scope="session")
def config():
    return build_config()


@pytest.fixture(scope="session")
def pipeline(config):
    return Pipeline(config)


@pytest.fixture(scope="session")
def index(pipeline):
    return pipeline.index


@pytest.fixture(scope="session")
def patterns(pipeline):
    return pipeline.patterns


@pytest.fixture(scope="session")
def tables_dir():
    return default_data_dir() / "tables"


def write_dictionary(tmp_path, rows, name="dict.csv"):
    path = tmp_path / name
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return path
