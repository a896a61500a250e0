import numpy as np
import pytest

from vlpalloc import assemble_gamma, load_scenario, tables_scenario_path


@pytest.fixture(scope="session")
def tables():
    return load_scenario(tables_scenario_path())


@pytest.fixture(scope="session")
def gamma(tables):
    return assemble_gamma(tables)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
