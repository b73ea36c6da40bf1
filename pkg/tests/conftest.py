import numpy as np
import pytest

from src.ground_states import SolverOpts, solve_ground_state
from src.profiles import build_profiles
from src.spectral import Grid

# dx = 1/16 keeps the dense L+/L- matrices at n = 2048
PROFILE_GRID = Grid(2048, 128.0)
WIDE_GRID = Grid(4096, 256.0)


@pytest.fixture(scope="session")
def opts():
    return SolverOpts()


@pytest.fixture(scope="session")
def grid():
    return PROFILE_GRID


@pytest.fixture(scope="session")
def ground(grid, opts):
    return solve_ground_state(grid, opts)


@pytest.fixture(scope="session")
def wide_ground(opts):
    return solve_ground_state(WIDE_GRID, opts)


@pytest.fixture(scope="session")
def profile_set(ground, opts):
    return build_profiles(ground, opts)


@pytest.fixture(scope="session")
def small_grid():
    return Grid(256, 32.0)


@pytest.fixture(scope="session")
def small_ground(small_grid):
    return solve_ground_state(small_grid)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def band_limited(grid, rng, modes=10, real=False):
    """Random trigonometric polynomial with |j| <= modes."""
    coeffs = np.zeros(grid.n, dtype=np.complex128)
    j = np.arange(-modes, modes + 1)
    coeffs[j % grid.n] = rng.normal(size=j.size) + 1j * rng.normal(size=j.size)
    values = grid.ifft(coeffs) * grid.n / np.sqrt(grid.box_length)
    return values.real if real else values


@pytest.fixture
def make_field(rng):
    def make(grid, modes=10, real=False):
        return band_limited(grid, rng, modes, real)

    return make
