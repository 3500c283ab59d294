import pytest

from mpqkd.cli import fixture_path
from mpqkd.io import load_config, load_counts


@pytest.fixture(scope="session")
def sym_config():
    return load_config(fixture_path("config_symmetric.json"))


@pytest.fixture(scope="session")
def asym_config():
    return load_config(fixture_path("config_asymmetric.json"))


@pytest.fixture(scope="session")
def sym_counts():
    return load_counts(fixture_path("table4_symmetric.csv"))


@pytest.fixture(scope="session")
def asym_counts():
    return load_counts(fixture_path("table4_asymmetric.csv"))
