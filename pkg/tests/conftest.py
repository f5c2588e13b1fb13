import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from plates.assembly import assemble_coarse, assemble_fine, boundary_condition_system  # noqa: E402
from plates.material import spruce_engelmann  # noqa: E402
from plates.mesh import barycentric_subdivide, generate_slab_mesh  # noqa: E402
from plates.whitney import WhitneyBasis  # noqa: E402

CUBE = ((0.01, 0.005, 0.01), (0.01, 0.005, 0.01))
REDUCED = ((0.02, 0.005, 0.04), (0.01, 0.005, 0.01))
FULL = ((0.10, 0.01, 0.20), (0.01, 0.005, 0.01))
RHO = 360.0


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running full-scale checks (PLATES_RUN_SLOW=1)")


@pytest.fixture(scope="session")
def spruce():
    return spruce_engelmann()


@pytest.fixture(scope="session")
def cube_K():
    return barycentric_subdivide(generate_slab_mesh(*CUBE))


@pytest.fixture(scope="session")
def cube_W(cube_K):
    return WhitneyBasis(cube_K)


@pytest.fixture(scope="session")
def reduced_Kc():
    return generate_slab_mesh(*REDUCED)


@pytest.fixture(scope="session")
def reduced_K(reduced_Kc):
    return barycentric_subdivide(reduced_Kc)


@pytest.fixture(scope="session")
def reduced_coarse(reduced_K, spruce):
    return assemble_coarse(reduced_K, spruce)


@pytest.fixture(scope="session")
def reduced_fine(reduced_coarse, spruce):
    bc = boundary_condition_system(reduced_coarse.whitney, spruce)
    return assemble_fine(reduced_coarse, bc)


@pytest.fixture(scope="session")
def full_Kc():
    return generate_slab_mesh(*FULL)


@pytest.fixture(scope="session")
def full_K(full_Kc):
    return barycentric_subdivide(full_Kc)
