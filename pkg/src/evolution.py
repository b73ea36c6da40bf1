"""Strang-split time stepping of i u_t = D u - |u|^2 u.

Both substeps are exact: the nonlinear flow rotates the phase pointwise and the
linear flow is diagonal in Fourier space. Long runs carry a Frame (mu, s) with
u(t, x) = mu^{-1/2} w((x - s) / mu), so a concentrating solution can be zoomed
back to unit scale without refining the grid.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from src.errors import ConfigError, NumericalCorruptionError, StepSizeError
from src.spectral import ComplexField, conserved_values, density, half_norm_sq, resample_values

logger = logging.getLogger(__name__)

MIN_ZOOM = 1e-6
MAX_ZOOM = 1e6


@dataclass(frozen=True)
class EvolutionConfig:
    dt: float = 1e-3
    t_begin: float = 0.0
    t_end: float = 1.0
    cfl_safety: float = 0.1
    snapshot_stride: int = 10
    regrid: bool = False
    regrid_floor: float = 8.0
    regrid_target: float = 16.0
    norm_ceiling: float = 1e3
    dt_min: float = 1e-9
    dealias: bool = True

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ConfigError(f"evolution.dt must be positive, got {self.dt}")
        if self.t_end == self.t_begin:
            raise ConfigError("evolution interval is empty")
        if not 0.0 < self.cfl_safety <= 1.0:
            raise ConfigError(f"evolution.cfl_safety must lie in (0, 1], got {self.cfl_safety}")
        if self.snapshot_stride < 1:
            raise ConfigError(f"evolution.snapshot_stride must be positive, got {self.snapshot_stride}")
        if self.regrid and not 0.0 < self.regrid_floor < self.regrid_target:
            raise ConfigError(
                f"need 0 < regrid_floor < regrid_target, got {self.regrid_floor} and {self.regrid_target}"
            )

    @property
    def direction(self):
        return 1.0 if self.t_end > self.t_begin else -1.0


@dataclass(frozen=True)
class Frame:
    """Physical position x = scale * y + shift of working coordinate y."""

    scale: float = 1.0
    shift: float = 0.0

    def compose(self, kappa, z0):
        return Frame(self.scale * kappa, self.shift + self.scale * z0)

    def conserved(self, grid, values):
        triple = conserved_values(grid, values)
        return type(triple)(triple.mass, triple.energy / self.scale, triple.momentum / self.scale)

    def half_norm(self, grid, values):
        """Physical ||u||_{H^{1/2}}."""
        coeffs = grid.fft(values)
        weight = np.sqrt(1.0 + (grid.wavenumbers / self.scale) ** 2)
        return math.sqrt(grid.spacing / grid.n * float(np.sum(weight * np.abs(coeffs) ** 2)))

    def half_derivative_norm(self, grid, values):
        """Physical ||D^{1/2} u||."""
        return math.sqrt(half_norm_sq(grid, values) / self.scale)


@dataclass(frozen=True, eq=False)
class Snapshot:
    time: float
    field: ComplexField
    frame: Frame = Frame()


@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    detail: dict = field(default_factory=dict)


@dataclass
class Trajectory:
    snapshots: list = field(default_factory=list)
    conserved_series: list = field(default_factory=list)
    events: list = field(default_factory=list)
    steps: int = 0

    @property
    def halted(self):
        return any(event.kind == "blowup" for event in self.events)

    @property
    def final(self):
        return self.snapshots[-1]

    def drift(self):
        """Largest relative deviation of (M, E, P) from their first recorded values."""
        first = self.conserved_series[0][1]
        out = {}
        for name in ("mass", "energy", "momentum"):
            start = getattr(first, name)
            scale = max(abs(start), 1e-300) if name == "mass" else max(abs(start), first.mass)
            out[name] = max(abs(getattr(c, name) - start) for _, c in self.conserved_series) / scale
        return out


def _nonlinear(grid, values, dt, dealias):
    return values * np.exp(1j * dt * density(grid, values, dealias))


def _linear(grid, values, dt):
    return grid.ifft(np.exp(-1j * dt * grid.abs_wavenumbers) * grid.fft(values))


def _strang(grid, values, dt, nonlinear=True, dealias=True):
    if not nonlinear:
        return _linear(grid, values, dt)
    values = _nonlinear(grid, values, 0.5 * dt, dealias)
    values = _linear(grid, values, dt)
    return _nonlinear(grid, values, 0.5 * dt, dealias)


def admissible_step(values, cfl_safety):
    peak = float(np.max(np.abs(values))) ** 2
    return math.inf if peak == 0.0 else cfl_safety / peak


def step(u, dt, cfl_safety=0.1, nonlinear=True, dealias=True):
    """One Strang step N(dt/2) L(dt) N(dt/2); ``nonlinear=False`` runs the free flow only."""
    if nonlinear:
        allowed = admissible_step(u.values, cfl_safety)
        if abs(dt) > allowed:
            raise StepSizeError(abs(dt), allowed)
    return u.with_values(_strang(u.grid, u.values, dt, nonlinear, dealias))


def zoom_values(grid, values, scale, shift=0.0, phase=0.0):
    """scale^{1/2} u(scale * y + shift) e^{i phase} on the nodes of ``grid``; samples outside the box are 0."""
    if not MIN_ZOOM <= scale <= MAX_ZOOM:
        raise ConfigError(f"zoom factor must lie in [{MIN_ZOOM:g}, {MAX_ZOOM:g}], got {scale}")
    out = resample_values(grid, np.asarray(values, dtype=np.complex128), grid, scale, shift, periodic=False)
    return math.sqrt(scale) * out * np.exp(1j * phase)


def zoom(u, scale, shift=0.0, phase=0.0):
    return u.with_values(zoom_values(u.grid, u.values, scale, shift, phase))


def concentration_length(grid, values):
    """||w||^2 / ||D^{1/2} w||^2; equals 1 for Q."""
    kinetic = half_norm_sq(grid, values)
    if kinetic == 0.0:
        return math.inf
    return grid.spacing * float(np.sum(np.abs(values) ** 2)) / kinetic


def barycentre(grid, values):
    rho = np.abs(values) ** 2
    return float(np.sum(grid.nodes * rho) / np.sum(rho))


def evolve(u0, cfg, observers=(), frame=None):
    """Integrate from cfg.t_begin towards cfg.t_end and return the recorded trajectory.

    Observers are called as ``observer(time, field, frame)`` at every snapshot.
    """
    grid = u0.grid
    frame = frame or Frame()
    direction = cfg.direction
    w = np.array(u0.values, dtype=np.complex128)
    t = cfg.t_begin
    trajectory = Trajectory()
    initial_norm = frame.half_norm(grid, w)
    last_valid = Snapshot(t, u0, frame)

    def record(time, values):
        nonlocal last_valid
        snapshot = Snapshot(time, ComplexField(grid, values), frame)
        trajectory.snapshots.append(snapshot)
        trajectory.conserved_series.append((time, frame.conserved(grid, values)))
        last_valid = snapshot
        for observer in observers:
            observer(time, snapshot.field, frame)

    record(t, w)
    tolerance = 1e-12 * max(1.0, abs(cfg.t_end))
    while direction * (cfg.t_end - t) > tolerance:
        allowed = admissible_step(w, cfg.cfl_safety)
        if frame.scale * allowed < cfg.dt_min:
            trajectory.events.append(Event(t, "blowup", {"reason": "step", "admissible_dt": frame.scale * allowed}))
            logger.warning(f"Halting at t={t:.12g}: admissible step {frame.scale * allowed:.2e} below dt_min")
            break
        dtau = min(cfg.dt, allowed, abs(cfg.t_end - t) / frame.scale)
        w = _strang(grid, w, direction * dtau, dealias=cfg.dealias)
        if not np.isfinite(w).all():
            raise NumericalCorruptionError(f"non-finite field after step at t={t:.12g}", last_valid=last_valid)
        t += direction * dtau * frame.scale
        trajectory.steps += 1
        finished = direction * (cfg.t_end - t) <= tolerance
        if finished:
            t = cfg.t_end
        if cfg.regrid:
            length = concentration_length(grid, w)
            if length < cfg.regrid_floor * grid.spacing:
                kappa = length / (cfg.regrid_target * grid.spacing)
                z0 = barycentre(grid, w)
                mass_before = grid.spacing * float(np.sum(np.abs(w) ** 2))
                w = zoom_values(grid, w, kappa, z0)
                frame = frame.compose(kappa, z0)
                mass_after = grid.spacing * float(np.sum(np.abs(w) ** 2))
                trajectory.events.append(
                    Event(t, "regrid", {"kappa": kappa, "scale": frame.scale, "shift": frame.shift,
                                        "mass_loss": mass_before - mass_after})
                )
                logger.info(f"Regrid at t={t:.12g}: kappa={kappa:.4f}, frame scale {frame.scale:.6e}")
        if finished or trajectory.steps % cfg.snapshot_stride == 0:
            record(t, w)
            norm = frame.half_norm(grid, w)
            if norm > cfg.norm_ceiling * initial_norm:
                trajectory.events.append(Event(t, "blowup", {"reason": "norm", "half_norm": norm}))
                logger.warning(f"Halting at t={t:.12g}: H^1/2 norm {norm:.3e} exceeds the ceiling")
                break
    logger.info(f"Evolution finished at t={t:.12g} after {trajectory.steps} steps, {len(trajectory.events)} events")
    return trajectory
