import math

import numpy as np
import pytest

from src.errors import ConfigError, StepSizeError
from src.evolution import (
    EvolutionConfig,
    Frame,
    barycentre,
    concentration_length,
    evolve,
    step,
    zoom,
)
from src.ground_states import solve_ground_state
from src.spectral import ComplexField, Grid, conserved_values


def gaussian(grid, amplitude=1.0, width=1.0, k=0.0):
    x = grid.nodes
    return ComplexField(grid, amplitude * np.exp(-((x / width) ** 2)) * np.exp(1j * k * x))


def test_ground_state_rotates_in_phase(ground):
    errors = []
    for dt in (1e-3, 5e-4):
        trajectory = evolve(ground.q, EvolutionConfig(dt=dt, t_end=1.0, snapshot_stride=100))
        final = trajectory.final
        assert final.time == pytest.approx(1.0)
        exact = np.exp(1j * final.time) * ground.values
        errors.append(np.max(np.abs(final.field.values - exact)))
    # splitting error, second order in dt
    assert errors[0] <= 1e-4
    assert errors[1] <= 0.35 * errors[0]
    assert trajectory.drift()["mass"] <= 1e-10
    assert not trajectory.halted


def test_energy_error_is_second_order():
    grid = Grid(1024, 64.0)
    u0 = ComplexField(grid, 1.2 * np.exp(-grid.nodes ** 2 / 2.0))
    coarse = evolve(u0, EvolutionConfig(dt=0.01, t_end=1.0, snapshot_stride=10))
    fine = evolve(u0, EvolutionConfig(dt=0.005, t_end=1.0, snapshot_stride=20))
    assert len(coarse.snapshots) == len(fine.snapshots)
    ratio = coarse.drift()["energy"] / fine.drift()["energy"]
    assert 3.2 <= ratio <= 4.8


def test_free_flow_on_plane_wave():
    grid = Grid(64, 2.0 * math.pi)
    wave = ComplexField(grid, np.exp(3j * grid.nodes))
    out = step(wave, 0.1, nonlinear=False)
    assert np.max(np.abs(out.values - np.exp(-0.3j) * wave.values)) <= 1e-12


def test_step_size_error_reports_admissible_step():
    grid = Grid(128, 20.0)
    u = gaussian(grid, amplitude=10.0)
    with pytest.raises(StepSizeError) as excinfo:
        step(u, 0.01)
    assert excinfo.value.admissible_dt == pytest.approx(1e-3)
    assert excinfo.value.dt == pytest.approx(0.01)


def test_backward_run_retraces_forward_run():
    grid = Grid(256, 32.0)
    u0 = gaussian(grid, amplitude=1.0, k=0.5)
    forward = evolve(u0, EvolutionConfig(dt=0.01, t_end=0.5))
    backward = evolve(forward.final.field, EvolutionConfig(dt=0.01, t_begin=0.5, t_end=0.0))
    assert backward.final.time == 0.0
    assert np.max(np.abs(backward.final.field.values - u0.values)) <= 1e-9


def test_observers_see_every_snapshot():
    grid = Grid(128, 20.0)
    seen = []
    trajectory = evolve(
        gaussian(grid, 0.5),
        EvolutionConfig(dt=0.01, t_end=0.1, snapshot_stride=2),
        observers=[lambda t, u, frame: seen.append(t)],
    )
    assert seen == [snapshot.time for snapshot in trajectory.snapshots]
    assert len(seen) == 6


def test_dt_min_halts_the_run(small_ground):
    trajectory = evolve(small_ground.q, EvolutionConfig(dt=1e-3, t_end=1.0, dt_min=1.0))
    assert trajectory.halted
    assert trajectory.steps == 0
    assert trajectory.events[0].detail["reason"] == "step"


@pytest.mark.parametrize(
    "kwargs",
    [
        {"dt": 0.0},
        {"t_begin": 1.0, "t_end": 1.0},
        {"cfl_safety": 1.5},
        {"snapshot_stride": 0},
        {"regrid": True, "regrid_floor": 20.0, "regrid_target": 16.0},
    ],
)
def test_evolution_config_validates(kwargs):
    with pytest.raises(ConfigError):
        EvolutionConfig(**kwargs)


def test_zoom_identity_and_mass():
    grid = Grid(1024, 64.0)
    u = gaussian(grid, k=1.0)
    assert np.max(np.abs(zoom(u, 1.0).values - u.values)) <= 1e-10
    wider = zoom(u, 0.5)
    mass = conserved_values(grid, u.values).mass
    assert conserved_values(grid, wider.values).mass == pytest.approx(mass, rel=1e-10)


def test_zoom_scales_energy():
    grid = Grid(1024, 64.0)
    u = gaussian(grid, amplitude=0.5)
    narrow = zoom(u, 2.0)
    energy = conserved_values(grid, u.values).energy
    assert conserved_values(grid, narrow.values).energy == pytest.approx(2.0 * energy, rel=1e-8)


@pytest.mark.parametrize("scale", [0.0, 1e-7, 2e6])
def test_zoom_range(scale):
    grid = Grid(64, 10.0)
    with pytest.raises(ConfigError):
        zoom(gaussian(grid), scale)


def test_frame_maps_working_invariants():
    grid = Grid(512, 40.0)
    values = gaussian(grid, 0.8, k=0.3).values
    frame = Frame(2.0, 1.0)
    working = conserved_values(grid, values)
    physical = frame.conserved(grid, values)
    assert physical.mass == working.mass
    assert physical.energy == pytest.approx(0.5 * working.energy)
    assert physical.momentum == pytest.approx(0.5 * working.momentum)
    composed = frame.compose(0.5, 2.0)
    assert composed == Frame(1.0, 5.0)


def test_concentration_length_and_barycentre(small_ground):
    grid = small_ground.grid
    assert concentration_length(grid, small_ground.values) == pytest.approx(1.0, rel=1e-2)
    assert barycentre(grid, small_ground.values) == pytest.approx(0.0, abs=1e-3)
    assert concentration_length(grid, np.zeros(grid.n)) == math.inf


def test_subcritical_data_disperses():
    grid = Grid(1024, 128.0)
    ground = solve_ground_state(grid)
    trajectory = evolve(0.9 * ground.q, EvolutionConfig(dt=1e-2, t_end=10.0, snapshot_stride=50))
    assert not trajectory.halted
    assert trajectory.final.time == pytest.approx(10.0)
    assert trajectory.drift()["mass"] <= 1e-10


def test_regrid_widens_a_narrow_bump():
    grid = Grid(1024, 64.0)
    u0 = ComplexField(grid, 0.1 * np.exp(-((grid.nodes / 0.3) ** 2)))
    cfg = EvolutionConfig(dt=1e-3, t_end=0.01, regrid=True)
    trajectory = evolve(u0, cfg)
    regrids = [event for event in trajectory.events if event.kind == "regrid"]
    assert len(regrids) == 1
    assert regrids[0].detail["scale"] < 1.0
    final = trajectory.final
    assert final.frame.scale == pytest.approx(regrids[0].detail["scale"])
    assert concentration_length(grid, final.field.values) == pytest.approx(cfg.regrid_target * grid.spacing, rel=0.05)
    assert final.time == pytest.approx(0.01)
    drift = trajectory.drift()
    assert drift["mass"] <= 1e-8
    assert drift["energy"] <= 1e-5
