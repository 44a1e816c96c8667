import numpy as np
import pytest

from hyperscat.eikonal import PhaseGrid, build_phase
from hyperscat.model import LadderSpec, pure_hyperbolic, radial


@pytest.fixture(scope="session")
def ladder():
    return LadderSpec()


@pytest.fixture(scope="session")
def radial_metric():
    return radial(c=1.0, kappa=0.0)


@pytest.fixture(scope="session")
def test_grid(ladder, radial_metric):
    return PhaseGrid.from_ladder(ladder, radial_metric, nodes=(17, 5, 5, 9),
                                 r_span=7.0)


@pytest.fixture(scope="session")
def radial_phase(test_grid, radial_metric):
    """Shared outgoing phase for the radial family at eps = 1."""
    return build_phase(test_grid, radial_metric, eps=1.0, t_max=30.0)


@pytest.fixture(scope="session")
def free_phase(test_grid):
    """Phase of the unperturbed family (gamma = 0)."""
    return build_phase(test_grid, pure_hyperbolic(), eps=0.0, t_max=20.0,
                       ladder_points=3)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260808)
