from types import SimpleNamespace

import numpy as np
import pytest

from src.errors import ConfigError, GridError
from src.linearized import coercivity_constant, make_operator
from src.modulation import ModulationState
from src.spectral import ComplexField, Grid
from src.virial import (
    VirialConfig,
    localized_coercivity,
    localized_dense,
    localized_forms,
    localized_weight,
    phi_prime,
    phi_second,
    virial_value,
)


@pytest.fixture
def small_profiles(small_ground):
    return SimpleNamespace(grid=small_ground.grid, q=small_ground.values)


def test_weight_is_odd_and_smooth():
    x = np.linspace(-5.0, 5.0, 1001)
    assert np.allclose(phi_prime(-x), -phi_prime(x))
    for joint in (1.0, 2.0):
        below, above = phi_prime([joint - 1e-9, joint + 1e-9])
        assert above - below == pytest.approx(0.0, abs=1e-8)
        below, above = phi_second([joint - 1e-9, joint + 1e-9])
        assert above - below == pytest.approx(0.0, abs=1e-7)
    assert np.all(phi_second(x) > 0.0)
    assert phi_prime(0.5) == pytest.approx(0.5)
    assert phi_prime(4.0) == pytest.approx(3.0 - np.exp(-4.0))


def test_localized_form_matches_dense_matrix(small_profiles, make_field):
    grid = small_profiles.grid
    q2 = small_profiles.q ** 2
    dense = localized_dense(grid, 3.0)
    for _ in range(3):
        e1 = make_field(grid, modes=12, real=True)
        e2 = make_field(grid, modes=12, real=True)
        plus, minus = localized_forms(ComplexField(grid, e1 + 1j * e2), small_profiles, 3.0)
        expected_plus = grid.spacing * e1 @ (dense + np.diag(1.0 - 3.0 * q2)) @ e1
        expected_minus = grid.spacing * e2 @ (dense + np.diag(1.0 - q2)) @ e2
        assert plus == pytest.approx(expected_plus, rel=1e-6)
        assert minus == pytest.approx(expected_minus, rel=1e-6)


def test_wide_localization_recovers_linearized_forms(small_ground, small_profiles, make_field):
    grid = small_ground.grid
    e1 = make_field(grid, modes=12, real=True)
    plus, _ = localized_forms(ComplexField(grid, e1), small_profiles, 1000.0)
    expected = grid.spacing * e1 @ make_operator("plus", small_ground).dense @ e1
    assert plus == pytest.approx(expected, rel=1e-6)
    assert np.all(localized_weight(grid, 1000.0) == 1.0)


def test_radius_and_grid_are_checked(small_profiles):
    grid = small_profiles.grid
    eps = ComplexField(grid, np.zeros(grid.n))
    with pytest.raises(ConfigError):
        localized_forms(eps, small_profiles, 0.5)
    with pytest.raises(ConfigError):
        VirialConfig(radius=0.9)
    with pytest.raises(GridError):
        localized_forms(ComplexField(Grid(128, 32.0), np.zeros(128)), small_profiles, 2.0)
    with pytest.raises(ConfigError):
        localized_dense(grid, 2.0, dense_limit=128)


def test_virial_value_vanishes_without_remainder(small_ground):
    grid = small_ground.grid
    zero = ComplexField(grid, np.zeros(grid.n))
    value = virial_value(zero, small_ground.q, ModulationState(b=0.1), VirialConfig())
    assert value == 0.0


def test_virial_value_of_small_remainder_is_quadratic(small_ground, make_field):
    grid = small_ground.grid
    eps = ComplexField(grid, make_field(grid, modes=8))
    state = ModulationState(b=0.1)
    small = virial_value(1e-3 * eps, small_ground.q, state, VirialConfig())
    smaller = virial_value(5e-4 * eps, small_ground.q, state, VirialConfig())
    assert small / smaller == pytest.approx(4.0, rel=1e-2)


@pytest.mark.slow
def test_wide_localized_coercivity_agrees_with_global(profile_set):
    ps = profile_set
    rows, threshold = localized_coercivity(ps, [200.0])
    assert threshold == 200.0
    reference = coercivity_constant(
        make_operator("plus", ps.ground),
        make_operator("minus", ps.ground),
        plus_ortho=[ps.q, ps.s1, ps.g1],
        minus_ortho=[ps.rho1],
    )
    assert rows[0].constant == pytest.approx(reference.constant, rel=1e-6)
