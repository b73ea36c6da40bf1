import math

import numpy as np
import pytest

from src.errors import ConfigError, ConvergenceError, GridError, NumericalCorruptionError
from src.spectral import (
    ComplexField,
    Grid,
    SMOOTHING_PREFACTOR,
    SQuadrature,
    conserved,
    conserved_values,
    cubic,
    dealiased_triple_product,
    density,
    dpow,
    fractional_derivative,
    grad,
    half_norm_sq,
    homogeneous_norm,
    l2_norm,
    lambda_op,
    make_grid,
    momentum_values,
    resolvent_smooth,
    scaling_generator,
    resample_values,
    smoothing_identity,
    sobolev_norm,
    translate,
    triple_product,
)


def hermite_gaussian(x):
    """Fourth derivative of exp(-x^2); its moments of order 0..3 vanish."""
    return (16.0 * x ** 4 - 48.0 * x ** 2 + 12.0) * np.exp(-x * x)


@pytest.mark.parametrize("n, box", [(12, 10.0), (4, 10.0), (64, 0.5), (64, 2e6), (2 ** 25, 10.0)])
def test_make_grid_rejects_bad_sizes(n, box):
    with pytest.raises(GridError):
        make_grid(n, box)


def test_grid_accepts_eight_nodes():
    grid = make_grid(8, 2.0 * math.pi)
    assert grid.spacing == pytest.approx(math.pi / 4.0)
    assert grid.nodes[0] == pytest.approx(-math.pi)


def test_field_rejects_nan_and_wrong_shape():
    grid = Grid(16, 4.0)
    values = np.zeros(16)
    values[3] = np.nan
    with pytest.raises(NumericalCorruptionError):
        ComplexField(grid, values)
    with pytest.raises(GridError):
        ComplexField(grid, np.zeros(8))


def test_field_arithmetic_checks_grids():
    a = ComplexField(Grid(16, 4.0), np.ones(16))
    b = ComplexField(Grid(16, 8.0), np.ones(16))
    with pytest.raises(GridError):
        a + b


@pytest.mark.parametrize("k", [1, 3, -7, 20])
def test_d_on_plane_wave(k):
    grid = Grid(64, 2.0 * math.pi)
    wave = np.exp(1j * k * grid.nodes)
    out = dpow(grid, wave, 1.0)
    assert np.max(np.abs(out - abs(k) * wave)) <= 1e-12 * abs(k)


def test_d_matches_periodized_hilbert_oracle():
    grid = Grid(2 ** 14, 400.0)
    length = grid.box_length
    r = math.exp(-2.0 * math.pi / length)
    theta = 2.0 * math.pi * grid.nodes / length
    periodized = (2.0 * math.pi / length) * (1.0 - r * r) / (1.0 - 2.0 * r * np.cos(theta) + r * r)
    z = r * np.exp(1j * theta)
    exact = (2.0 * math.pi / length) ** 2 * 2.0 * np.real(z / (1.0 - z) ** 2)
    out = dpow(grid, periodized, 1.0)
    assert np.max(np.abs(out - exact)) <= 1e-9 * np.max(np.abs(exact))


def test_d_matches_whole_line_formula_up_to_constant():
    grid = Grid(2 ** 14, 400.0)
    x = grid.nodes
    out = dpow(grid, 2.0 / (1.0 + x * x), 1.0)
    exact = 2.0 * (1.0 - x * x) / (1.0 + x * x) ** 2
    window = np.abs(x) <= 10.0
    assert np.ptp((out - exact)[window]) <= 1e-6


def test_negative_power_rejects_mean():
    grid = Grid(64, 10.0)
    with pytest.raises(ConfigError):
        dpow(grid, np.ones(64), -0.5)


def test_commutator_d_lambda():
    grid = Grid(1024, 64.0)
    f = hermite_gaussian(grid.nodes)
    df = dpow(grid, f, 1.0)
    lhs = dpow(grid, lambda_op(grid, f), 1.0) - lambda_op(grid, df)
    assert l2_norm(grid, lhs - df) <= 1e-6 * l2_norm(grid, df)


def test_commutator_lambda_grad():
    grid = Grid(1024, 64.0)
    f = hermite_gaussian(grid.nodes)
    df = grad(grid, f)
    lhs = lambda_op(grid, df) - grad(grid, lambda_op(grid, f))
    assert l2_norm(grid, lhs + df) <= 1e-9 * l2_norm(grid, df)


def test_real_input_stays_real():
    grid = Grid(128, 20.0)
    f = np.exp(-grid.nodes ** 2)
    assert np.isrealobj(dpow(grid, f, 0.5))
    assert np.isrealobj(grad(grid, f))


def test_dealiased_product_exact_for_band_limited(make_field):
    grid = Grid(128, 20.0)
    f, g, h = (make_field(grid, modes=grid.n // 8) for _ in range(3))
    exact = f * g * h
    assert np.max(np.abs(triple_product(grid, f, g, h) - exact)) <= 1e-11 * np.max(np.abs(exact))
    assert np.allclose(cubic(grid, f), np.abs(f) ** 2 * f, atol=1e-11 * np.max(np.abs(f)) ** 3)


def test_density_ignores_phase(make_field):
    grid = Grid(128, 20.0)
    f = make_field(grid, modes=20)
    rotated = f * np.exp(1j * np.sin(grid.nodes))
    assert np.allclose(density(grid, f), density(grid, rotated), atol=1e-13)
    assert np.array_equal(density(grid, f, dealias=False), np.abs(f) ** 2)


def test_translate_plane_wave():
    grid = Grid(64, 2.0 * math.pi)
    wave = np.exp(3j * grid.nodes)
    moved = translate(grid, wave, 0.7)
    assert np.max(np.abs(moved - np.exp(3j * (grid.nodes - 0.7)))) <= 1e-12


def test_resample_identity_and_shift(make_field):
    grid = Grid(128, 20.0)
    f = make_field(grid, modes=15)
    assert np.max(np.abs(resample_values(grid, f, grid) - f)) <= 1e-10 * np.max(np.abs(f))
    shifted = resample_values(grid, f, grid, 1.0, 0.3)
    assert np.max(np.abs(shifted - translate(grid, f, -0.3))) <= 1e-10 * np.max(np.abs(f))


def test_conserved_values_of_modulated_gaussian():
    grid = Grid(1024, 64.0)
    x = grid.nodes
    u = np.exp(-x * x / 2.0) * np.exp(0.5j * x)
    triple = conserved_values(grid, u)
    assert triple.mass == pytest.approx(math.sqrt(math.pi), rel=1e-12)
    # P = k * M for a plane-wave modulated real profile
    assert triple.momentum == pytest.approx(0.5 * math.sqrt(math.pi), rel=1e-10)
    assert momentum_values(grid, np.exp(-x * x)) == pytest.approx(0.0, abs=1e-14)


def test_norms_are_consistent(make_field):
    grid = Grid(256, 30.0)
    f = ComplexField(grid, make_field(grid, modes=12))
    assert sobolev_norm(f, 0.0) == pytest.approx(l2_norm(grid, f.values), rel=1e-12)
    assert homogeneous_norm(f, 0.5) ** 2 == pytest.approx(half_norm_sq(grid, f.values), rel=1e-12)
    with pytest.raises(ConfigError):
        sobolev_norm(f, 5.0)


def test_smoothing_identity_on_random_fields(make_field):
    grid = Grid(128, 20.0)
    for _ in range(20):
        f = ComplexField(grid, make_field(grid, modes=10))
        lhs, rhs = smoothing_identity(f)
        assert lhs == pytest.approx(rhs, rel=1e-6)


def test_quadrature_reports_non_convergence():
    quadrature = SQuadrature(nodes=4, tolerance=1e-15, max_nodes=8)
    with pytest.raises(ConvergenceError):
        quadrature.integrate(lambda s: math.sqrt(s) / (1e-6 + s) ** 2)


def test_resolvent_smoothing_on_plane_wave():
    grid = Grid(128, 20.0)
    k = 2.0 * np.pi * 3 / grid.box_length
    f = ComplexField(grid, np.cos(k * grid.nodes))
    smoothed = resolvent_smooth(f, 0.5)
    expected = SMOOTHING_PREFACTOR / (k * k + 0.5) * f.values
    assert np.allclose(smoothed.values, expected, rtol=0.0, atol=1e-12)
    with pytest.raises(ConfigError):
        resolvent_smooth(f, 0.0)


def test_field_wrappers_match_array_operators():
    grid = Grid(256, 30.0)
    x = grid.nodes
    f = ComplexField(grid, np.exp(-x * x + 0.5j * x))
    assert np.array_equal(fractional_derivative(f, 1.0).values, dpow(grid, f.values, 1.0))
    assert np.array_equal(scaling_generator(f).values, lambda_op(grid, f.values))
    assert conserved(f) == conserved_values(grid, f.values)
    product = dealiased_triple_product(f, f, ComplexField(grid, np.conj(f.values)))
    assert np.allclose(product.values, cubic(grid, f.values), rtol=0.0, atol=1e-14)
    with pytest.raises(ConfigError):
        fractional_derivative(f, -1.5)
    with pytest.raises(GridError):
        dealiased_triple_product(f, f, ComplexField(Grid(128, 30.0), np.ones(128)))
