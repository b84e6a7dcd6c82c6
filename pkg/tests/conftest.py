import numpy as np
import pytest

from src.database import dispose_engines
from src.geometry_field import make_field, make_flat_torus, make_potential


@pytest.fixture
def torus2():
    return make_flat_torus(2, [1.0, 1.0])


@pytest.fixture
def landau_field(torus2):
    return make_field(torus2, {"flux.12": 1})


@pytest.fixture
def free_field(torus2):
    return make_field(torus2, {})


@pytest.fixture
def no_potential(torus2):
    return make_potential(torus2, {})


@pytest.fixture
def random_hermitian():
    def build(n, seed=0):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        return 0.5 * (a + a.conj().T)

    return build


@pytest.fixture
def base_config():
    """Smallest valid experiment mapping; tests copy and extend it."""
    return {
        "name": "unit",
        "geometry": {"d": 2, "lengths": [1.0, 1.0]},
        "field": {"flux.12": 1},
        "phi": {"family": "exp", "t": 1.0},
    }


@pytest.fixture
def cache_dir(tmp_path):
    directory = tmp_path / "cache"
    yield str(directory)
    dispose_engines()
