import numpy as np
import pytest

from resonate.geometry import CavitySpec, RectangleSpec, benchmark_resonator
from resonate.mesh import triangulate
from resonate.spectra import Discretization, closed_problem


@pytest.fixture(scope="session")
def benchmark():
    return benchmark_resonator(eps=0.3, neck_length=0.4)


@pytest.fixture(scope="session")
def unit_square_mesh():
    return triangulate(RectangleSpec(1.0, 1.0), 0.1)


@pytest.fixture(scope="session")
def rectangle_disc():
    """P2 discretization of the 1 x 2 reference rectangle."""
    return Discretization.build(triangulate(RectangleSpec(1.0, 2.0), 0.1), order=2)


@pytest.fixture(scope="session")
def disc_mesh():
    return triangulate(CavitySpec.disc(1.0), 0.1)


@pytest.fixture(scope="session")
def closed_benchmark(benchmark):
    """(spec, closed, cavity) for the benchmark resonator at eps = 0.3."""
    return closed_problem(benchmark, 0.3, h=0.12, neck_layers=8, order=2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
