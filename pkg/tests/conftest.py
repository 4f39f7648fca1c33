from pathlib import Path

import pytest

from src.knots.curve import make_torus_knot
from src.morse.critical import SearchConfig, find_critical_points

DATA_DIR = Path(__file__).resolve().parents[1] / "data"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture(scope="session")
def unknot():
    return make_torus_knot(1, 0, 1.0, 0.0)


@pytest.fixture(scope="session")
def trefoil():
    return make_torus_knot(2, 3, 2.0, 1.0)


@pytest.fixture(scope="session")
def torus_3_4():
    return make_torus_knot(3, 4, 2.0, 1.0)


@pytest.fixture(scope="session")
def unknot_critical_points(unknot):
    return find_critical_points(unknot, SearchConfig(n_grid=12))


@pytest.fixture(scope="session")
def trefoil_critical_points(trefoil):
    return find_critical_points(trefoil, SearchConfig(n_grid=24))
