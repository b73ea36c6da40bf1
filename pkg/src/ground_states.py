"""Ground states Q and boosted ground states Q_v.

Q solves D Q + Q - Q^3 = 0; Q_v solves D Q_v + Q_v + i v Q_v' - |Q_v|^2 Q_v = 0.
Both are computed with a Petviashvili iteration on the symbol of the linear part.
The boosted solver falls back to preconditioned gradient descent on the
Weinstein quotient when the iteration stalls.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize_scalar

from src.errors import ConfigError, ConvergenceError
from src.spectral import (
    ComplexField,
    cubic,
    dpow_symbol,
    evaluate_uniform,
    l2_norm,
    momentum_values,
    multiply,
    translate,
)

logger = logging.getLogger(__name__)

PETVIASHVILI_EXPONENT = 1.5
MAX_VELOCITY = 0.95
CONTINUATION_START = 0.7
CONTINUATION_STEP = 0.05
TAIL_IMAGES = 256
TAIL_EXPONENT_RANGE = (1.2, 5.0)


@dataclass(frozen=True)
class SolverOpts:
    tolerance: float = 1e-10
    max_iterations: int = 500
    solvability_tolerance: float = 1e-4
    krylov_tolerance: float = 1e-12
    dense_limit: int = 4096

    def __post_init__(self):
        for name in ("tolerance", "solvability_tolerance", "krylov_tolerance"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ConfigError(f"solver.{name} must lie in (0, 1), got {value}")
        if self.max_iterations < 1:
            raise ConfigError(f"solver.max_iterations must be positive, got {self.max_iterations}")


@dataclass(frozen=True, eq=False)
class GroundState:
    q: ComplexField
    residual_norm: float
    mass: float
    tail_exponent: float
    iterations: int = 0
    stabilizer: float = 1.0
    order: float = 1.0

    @property
    def grid(self):
        return self.q.grid

    @property
    def values(self):
        return self.q.real


@dataclass(frozen=True, eq=False)
class BoostedState:
    qv: ComplexField
    v: float
    mass: float
    cv: float
    pohozaev_defect: float
    residual_norm: float = 0.0
    iterations: int = 0
    quotient: float = 0.0
    momentum: float = 0.0
    method: str = "petviashvili"

    @property
    def grid(self):
        return self.qv.grid


@dataclass
class MassCurveRow:
    v: float
    mass: float = math.nan
    cv: float = math.nan
    residual: float = math.nan
    pohozaev_defect: float = math.nan
    iterations: int = 0
    status: str = "ok"
    decreasing: bool = True
    state: BoostedState = field(default=None, repr=False)


def boost_symbol(grid, v, order=1.0):
    """Symbol of D + i v d/dx, i.e. |xi|^order - v xi."""
    return dpow_symbol(grid, order) - v * grid.odd_wavenumbers


def pin_symmetry(grid, values):
    """Recentre on the |u|^2 barycentre and rotate the mean onto the positive real axis."""
    density = np.abs(values) ** 2
    # node -L/2 has no mirror partner
    centre = float(np.sum(grid.nodes[1:] * density[1:]) / np.sum(density))
    if abs(centre) > 1e-14 * grid.box_length:
        values = translate(grid, values, -centre)
    mean = np.sum(values)
    if abs(mean) > 0.0:
        phase = mean / abs(mean)
        if np.isrealobj(values):
            values = values * np.sign(phase.real)
        else:
            values = values * np.conj(phase)
    return values


def equation_residual(grid, values, v=0.0, order=1.0):
    """(D + 1 + i v d/dx) u - |u|^2 u, relative to ||u||."""
    linear = multiply(grid, values, boost_symbol(grid, v, order) + 1.0, hermitian=(v == 0.0))
    return l2_norm(grid, linear - cubic(grid, values)) / l2_norm(grid, values)


def quotient_parts(grid, values, v=0.0, order=1.0):
    """(K, N, Z) with K = <(D + i v d/dx) u, u>, N = ||u||^2, Z = ||u||_4^4."""
    coeffs = grid.fft(values)
    kinetic = grid.spacing / grid.n * float(np.sum(boost_symbol(grid, v, order) * np.abs(coeffs) ** 2))
    density = np.abs(values) ** 2
    return kinetic, grid.spacing * float(density.sum()), grid.spacing * float(np.sum(density ** 2))


def weinstein_quotient(f, v=0.0):
    kinetic, mass, quartic = quotient_parts(f.grid, f.values, v)
    return kinetic * mass / quartic


def pohozaev_functional(f, v=0.0):
    """Half the boosted kinetic form minus a quarter of the quartic term."""
    kinetic, _, quartic = quotient_parts(f.grid, f.values, v)
    return 0.5 * kinetic - 0.25 * quartic


def _image_sum(x, length, exponent, parity):
    shifted = x[:, None] + length * np.arange(-TAIL_IMAGES, TAIL_IMAGES + 1)
    terms = np.abs(shifted) ** -exponent
    if parity < 0:
        terms = terms * np.sign(shifted)
    return np.abs(terms.sum(axis=1))


def tail_exponent(f, window=(20.0, 80.0), parity=None):
    """Decay exponent p of |f| ~ A x^-p on the window (x > 0).

    Without ``parity`` this is the sign-flipped least-squares slope of log|f| against log x.
    With parity +1 or -1 the model is the periodized tail A sum_m s_m |x + mL|^-p, with
    s_m = 1 for even fields and sign(x + mL) for odd ones, so the images do not bend the fit.
    """
    x = f.grid.nodes
    lo, hi = window
    mask = (x >= lo) & (x <= hi)
    if mask.sum() < 16:
        raise ConfigError(f"tail window [{lo}, {hi}] holds {int(mask.sum())} nodes, need at least 16")
    amplitude = np.abs(f.values[mask])
    if amplitude.min() <= 10.0 * np.finfo(float).eps:
        raise ConfigError(f"field drops below the roundoff floor inside [{lo}, {hi}]")
    if parity is None:
        slope = np.polyfit(np.log(x[mask]), np.log(amplitude), 1)[0]
        return float(-slope)
    if parity not in (1, -1):
        raise ConfigError(f"tail parity must be +1 or -1, got {parity}")
    log_amplitude = np.log(amplitude)

    def misfit(exponent):
        # log A enters linearly, so it is the mean offset
        offset = log_amplitude - np.log(_image_sum(x[mask], f.grid.box_length, exponent, parity))
        return float(np.sum((offset - offset.mean()) ** 2))

    fit = minimize_scalar(misfit, bounds=TAIL_EXPONENT_RANGE, method="bounded", options={"xatol": 1e-6})
    return float(fit.x)


def is_algebraic_tail(f, window=(20.0, 80.0), spread=0.1):
    """True when both halves of the window give the same decay exponent."""
    lo, hi = window
    middle = math.sqrt(lo * hi)
    first = tail_exponent(f, (lo, middle))
    second = tail_exponent(f, (middle, hi))
    return abs(first - second) <= spread * max(abs(first), abs(second))


def default_tail_window(grid):
    half = 0.5 * grid.box_length
    return min(20.0, 0.3 * half), min(80.0, 0.6 * half)


def _sech(grid, width=1.0):
    return 1.0 / np.cosh(grid.nodes / width)


def _petviashvili(grid, values, symbol, opts, label):
    """Fixed point of u -> M^{3/2} (symbol)^{-1} |u|^2 u with M = <symbol u, u> / <|u|^2 u, u>."""
    real = np.isrealobj(values)
    stabilizer = math.nan
    change = residual = math.inf
    for iteration in range(1, opts.max_iterations + 1):
        coeffs = grid.fft(values)
        nonlinear = grid.fft(cubic(grid, values))
        numerator = float(np.sum(symbol * np.abs(coeffs) ** 2))
        denominator = float(np.real(np.vdot(coeffs, nonlinear)))
        if denominator <= 0.0 or numerator <= 1e-300 or numerator > 1e12 * denominator:
            raise ConvergenceError(f"{label}: iterate collapsed to the zero field", iteration)
        stabilizer = numerator / denominator
        updated = grid.ifft(stabilizer ** PETVIASHVILI_EXPONENT * nonlinear / symbol)
        if real:
            updated = updated.real
        updated = pin_symmetry(grid, updated)
        norm = l2_norm(grid, updated)
        if norm < 1e-8:
            raise ConvergenceError(f"{label}: iterate collapsed to the zero field", iteration)
        change = l2_norm(grid, updated - values) / norm
        values = updated
        linear = multiply(grid, values, symbol, hermitian=real)
        residual = l2_norm(grid, linear - cubic(grid, values)) / norm
        if residual < opts.tolerance and change < opts.tolerance:
            return values, residual, iteration, stabilizer
    raise ConvergenceError(
        f"{label}: no convergence in {opts.max_iterations} iterations (residual {residual:.2e}, change {change:.2e})",
        opts.max_iterations,
        residual,
    )


def solve_ground_state(grid, opts=None, initial=None, order=1.0):
    """Petviashvili solve of |D|^order Q + Q = Q^3; order 1 is the half-wave ground state."""
    opts = opts or SolverOpts()
    if not 1e-12 <= opts.tolerance <= 1e-4:
        raise ConfigError(f"ground-state tolerance must lie in [1e-12, 1e-4], got {opts.tolerance}")
    if not 1.0 <= order <= 2.0:
        raise ConfigError(f"dispersion order must lie in [1, 2], got {order}")
    values = _sech(grid) if initial is None else np.real(np.asarray(initial, dtype=complex))
    symbol = dpow_symbol(grid, order) + 1.0
    values, residual, iterations, stabilizer = _petviashvili(grid, values, symbol, opts, "ground state")
    q = ComplexField(grid, values)
    mass = l2_norm(grid, values) ** 2
    try:
        exponent = tail_exponent(q, default_tail_window(grid), parity=1)
    except ConfigError:
        exponent = math.nan
    logger.info(
        f"Ground state on {grid.describe()}: {iterations} iterations, residual {residual:.2e}, mass {mass:.10f}"
    )
    return GroundState(q, residual, mass, exponent, iterations, stabilizer, order)


def _boosted_state(grid, values, v, residual, iterations, method):
    field_ = ComplexField(grid, values)
    kinetic, mass, quartic = quotient_parts(grid, values, v)
    return BoostedState(
        qv=field_,
        v=v,
        mass=mass,
        cv=quartic / (kinetic * mass),
        pohozaev_defect=abs(0.5 * kinetic - 0.25 * quartic),
        residual_norm=residual,
        iterations=iterations,
        quotient=kinetic * mass / quartic,
        momentum=momentum_values(grid, values),
        method=method,
    )


def minimize_quotient(grid, v=0.0, opts=None, initial=None):
    """Preconditioned projected gradient descent on log of the Weinstein quotient at fixed L2 norm.

    Returns the minimizer (normalized to the mass of the starting field) and the quotient value.
    """
    opts = opts or SolverOpts()
    values = np.asarray(_sech(grid) if initial is None else initial, dtype=np.complex128)
    target = l2_norm(grid, values)
    symbol = boost_symbol(grid, v)

    def log_quotient(u):
        kinetic, mass, quartic = quotient_parts(grid, u, v)
        return math.log(kinetic) + math.log(mass) - math.log(quartic), kinetic, mass, quartic

    value, kinetic, mass, quartic = log_quotient(values)
    for iteration in range(1, 50 * opts.max_iterations + 1):
        gradient = (
            2.0 * grid.ifft(symbol * grid.fft(values)) / kinetic
            + 2.0 * values / mass
            - 4.0 * cubic(grid, values) / quartic
        )
        direction = 0.5 * kinetic * grid.ifft(grid.fft(gradient) / (symbol + kinetic / mass))
        direction -= np.real(np.vdot(values, direction)) / np.real(np.vdot(values, values)) * values
        slope = grid.spacing * float(np.real(np.vdot(gradient, direction)))
        if slope <= 0.0 or l2_norm(grid, direction) < opts.tolerance * target:
            break
        step = 1.0
        while step >= 1e-8:
            trial = values - step * direction
            trial *= target / l2_norm(grid, trial)
            trial_value, *trial_parts = log_quotient(trial)
            if trial_value <= value - 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            break
        decrease = value - trial_value
        values, value = trial, trial_value
        kinetic, mass, quartic = trial_parts
        if decrease < 1e-15:
            break
    return values, kinetic * mass / quartic, iteration


def _gradient_fallback(grid, v, opts, initial):
    values, _, iterations = minimize_quotient(grid, v, opts, initial)
    kinetic, mass, quartic = quotient_parts(grid, values, v)
    # rescale the minimizer to a solution: Q(x) = a u(c x) with c = N / K, a^2 = 2 N / Z
    scale = mass / kinetic
    amplitude = math.sqrt(2.0 * mass / quartic)
    values = amplitude * evaluate_uniform(grid, values, scale * grid.nodes[0], scale * grid.spacing, grid.n)
    values = pin_symmetry(grid, values)
    residual = equation_residual(grid, values, v)
    return values, residual, iterations


def _continuation_path(v):
    if abs(v) <= CONTINUATION_START:
        return [v]
    sign = 1.0 if v > 0 else -1.0
    count = math.ceil((abs(v) - CONTINUATION_START) / CONTINUATION_STEP)
    return [sign * (CONTINUATION_START + (abs(v) - CONTINUATION_START) * j / count) for j in range(count + 1)]


def solve_boosted(grid, v, opts=None, initial=None, method="auto"):
    """Boosted ground state Q_v; ``method`` is 'auto', 'petviashvili' or 'gradient'."""
    opts = opts or SolverOpts()
    if abs(v) > MAX_VELOCITY:
        raise ConfigError(f"|v| must not exceed {MAX_VELOCITY}, got {v}")
    if method not in ("auto", "petviashvili", "gradient"):
        raise ConfigError(f"unknown boosted solver method {method!r}")
    path = [v] if initial is not None else _continuation_path(v)
    values = np.asarray(_sech(grid) if initial is None else initial, dtype=np.complex128)
    state = None
    for velocity in path:
        state = _solve_boosted_once(grid, velocity, opts, values, method)
        values = state.qv.values
    return state


def _solve_boosted_once(grid, v, opts, values, method):
    symbol = boost_symbol(grid, v) + 1.0
    if method != "gradient":
        try:
            solved, residual, iterations, _ = _petviashvili(grid, values, symbol, opts, f"boosted state v={v:g}")
            state = _boosted_state(grid, solved, v, residual, iterations, "petviashvili")
            logger.info(f"Boosted state v={v:g}: mass {state.mass:.10f} after {iterations} iterations")
            return state
        except ConvergenceError as e:
            if method == "petviashvili":
                raise
            logger.warning(f"Petviashvili failed at v={v:g} ({e}); falling back to quotient descent")
    solved, residual, iterations = _gradient_fallback(grid, v, opts, values)
    if residual > max(opts.tolerance, 1e-6):
        raise ConvergenceError(f"quotient descent at v={v:g} left residual {residual:.2e}", iterations, residual)
    state = _boosted_state(grid, solved, v, residual, iterations, "gradient")
    logger.info(f"Boosted state v={v:g} (gradient): mass {state.mass:.10f}, residual {residual:.2e}")
    return state


def mass_curve(grid, velocities, opts=None):
    """One boosted state per velocity, each warm-started from the previous row."""
    opts = opts or SolverOpts()
    velocities = [float(v) for v in velocities]
    if velocities != sorted(velocities):
        raise ConfigError("mass-curve velocities must be sorted")
    if any(abs(v) >= MAX_VELOCITY for v in velocities):
        raise ConfigError(f"mass-curve velocities must lie in (-{MAX_VELOCITY}, {MAX_VELOCITY})")
    rows = []
    warm = None
    warm_v = None
    for v in velocities:
        row = MassCurveRow(v=v)
        try:
            if warm is None:
                state = solve_boosted(grid, v, opts)
            else:
                state = None
                for step_v in _bridge(warm_v, v):
                    state = solve_boosted(grid, step_v, opts, initial=warm)
                    warm = state.qv.values
            warm, warm_v = state.qv.values, v
            row = replace(
                row,
                mass=state.mass,
                cv=state.cv,
                residual=state.residual_norm,
                pohozaev_defect=state.pohozaev_defect,
                iterations=state.iterations,
                state=state,
            )
        except ConvergenceError as e:
            logger.error(f"Mass curve row v={v:g} failed: {e}")
            row.status = "failed"
        rows.append(row)
    for previous, row in zip(rows, rows[1:]):
        if abs(row.v) > abs(previous.v):
            row.decreasing = row.mass < previous.mass
        elif abs(row.v) < abs(previous.v):
            row.decreasing = row.mass > previous.mass
    return rows


def _bridge(start, stop):
    """Intermediate velocities so that steps beyond |v| = 0.7 stay at or below the continuation step."""
    if max(abs(start), abs(stop)) <= CONTINUATION_START:
        return [stop]
    count = max(1, math.ceil(abs(stop - start) / CONTINUATION_STEP - 1e-12))
    return [start + (stop - start) * j / count for j in range(1, count + 1)]


def boosted_gn_gap(f, state):
    """E_v(u) - (1/2) K_v(u) (1 - ||u||^2 / ||Q_v||^2); non-negative by the sharp inequality."""
    kinetic, mass, quartic = quotient_parts(f.grid, f.values, state.v)
    return 0.5 * kinetic - 0.25 * quartic - 0.5 * kinetic * (1.0 - mass / state.mass)
