"""Geometric decomposition u = lam^{-1/2} (Q_P + eps)((x - alpha) / lam) e^{i gamma}.

The five parameters (lam, alpha, gamma, b, v) are fixed by requiring eps to be
orthogonal to five directions built from the profile set. ``decompose`` solves
those conditions by Newton iteration with a central-difference Jacobian. eps is
always sampled on the profile grid.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from src.errors import ConfigError, ConvergenceError, HalfwaveError
from src.evolution import barycentre, concentration_length
from src.linearized import make_operator
from src.profiles import MAX_PARAMETER, ProfileParams
from src.spectral import ComplexField, l2_norm, resample_values, sobolev_norm, translate

logger = logging.getLogger(__name__)

PARAMETERS = ("lam", "alpha", "gamma", "b", "v")
NEWTON_TOLERANCE = 1e-10
NEWTON_ITERATIONS = 30
DIFFERENCE_STEP = 1e-6


@dataclass(frozen=True, eq=False)
class ModulationState:
    lam: float = 1.0
    alpha: float = 0.0
    gamma: float = 0.0
    b: float = 0.0
    v: float = 0.0
    eps: ComplexField = None
    ortho_residuals: tuple = (0.0,) * 5
    iterations: int = 0

    @property
    def vector(self):
        return np.array([self.lam, self.alpha, self.gamma, self.b, self.v])

    @property
    def params(self):
        return ProfileParams(self.b, self.v)

    @classmethod
    def from_vector(cls, x, **kwargs):
        return cls(**{name: float(value) for name, value in zip(PARAMETERS, x)}, **kwargs)

    def to_frame(self, frame):
        """Parameters relative to the working coordinate of ``frame``."""
        return replace(self, lam=self.lam / frame.scale, alpha=(self.alpha - frame.shift) / frame.scale)

    def from_frame(self, frame):
        return replace(self, lam=self.lam * frame.scale, alpha=frame.shift + frame.scale * self.alpha)


def residual(u, ps, x):
    """eps on the profile grid for parameters x = (lam, alpha, gamma, b, v)."""
    lam, alpha, gamma, b, v = x
    params = ProfileParams(b, v)
    sampled = resample_values(u.grid, u.values, ps.grid, lam, alpha, periodic=True)
    return math.sqrt(lam) * np.exp(-1j * gamma) * sampled - (ps.sigma(params) + 1j * ps.theta(params))


def constraint_directions(ps, params):
    """k_i = a_i - i c_i with sigma_i = Re (eps, k_i) = (eps_1, a_i) - (eps_2, c_i)."""
    return [
        ps.theta(params, "lambda") - 1j * ps.sigma(params, "lambda"),
        ps.theta(params, db=1) - 1j * ps.sigma(params, db=1),
        ps.rho2(params) - 1j * ps.fields["rho1"],
        ps.theta(params, "grad") - 1j * ps.sigma(params, "grad"),
        ps.theta(params, dv=1) - 1j * ps.sigma(params, dv=1),
    ]


def conditions(grid, eps, directions):
    return np.array([grid.spacing * float(np.real(np.vdot(k, eps))) for k in directions])


def orthogonality_map(u, ps, x):
    params = ProfileParams(x[3], x[4])
    return conditions(ps.grid, residual(u, ps, x), constraint_directions(ps, params))


def _steps(x):
    lam = abs(x[0])
    return np.array([DIFFERENCE_STEP * lam, DIFFERENCE_STEP * lam, DIFFERENCE_STEP, DIFFERENCE_STEP, DIFFERENCE_STEP])


def orthogonality_jacobian(u, ps, x):
    """Central-difference Jacobian of the five conditions in (lam, alpha, gamma, b, v)."""
    x = np.asarray(x, dtype=float)
    steps = _steps(x)
    columns = []
    for i, h in enumerate(steps):
        forward = x.copy()
        backward = x.copy()
        forward[i] += h
        backward[i] -= h
        columns.append((orthogonality_map(u, ps, forward) - orthogonality_map(u, ps, backward)) / (2.0 * h))
    return np.column_stack(columns)


def reference_jacobian(ps):
    """Jacobian of the conditions at P = 0 for u = Q, from inner products of the profile fields."""
    grid = ps.grid
    minus = make_operator("minus", ps.ground)
    minus_s1 = grid.spacing * float(np.dot(minus.matvec(ps.s1), ps.s1))
    minus_g1 = grid.spacing * float(np.dot(minus.matvec(ps.g1), ps.g1))
    q_rho1 = grid.spacing * float(np.dot(ps.q, ps.rho1))
    s1_rho1 = grid.spacing * float(np.dot(ps.s1, ps.rho1))
    table = np.zeros((5, 5))
    table[0, 3] = minus_s1
    table[1, 0] = minus_s1
    table[2, 2] = q_rho1
    table[2, 3] = s1_rho1
    table[3, 4] = -minus_g1
    table[4, 1] = -minus_g1
    return table


def _admissible(x):
    return x[0] > 0.0 and abs(x[3]) <= MAX_PARAMETER and abs(x[4]) <= MAX_PARAMETER


def decompose(u, ps, guess=None, tolerance=NEWTON_TOLERANCE, max_iterations=NEWTON_ITERATIONS):
    """Newton solve of the five orthogonality conditions starting from ``guess``."""
    guess = guess or ModulationState()
    x = guess.vector
    if not _admissible(x):
        raise ConfigError(f"modulation guess outside the admissible set: {x}")
    scale = tolerance * ps.ground.mass
    sigma = orthogonality_map(u, ps, x)
    for iteration in range(max_iterations + 1):
        if np.max(np.abs(sigma)) <= scale:
            break
        if iteration == max_iterations:
            raise ConvergenceError(
                f"decomposition did not converge in {max_iterations} Newton steps (max |sigma| {np.max(np.abs(sigma)):.2e})",
                max_iterations,
                float(np.max(np.abs(sigma))),
            )
        jacobian = orthogonality_jacobian(u, ps, x)
        try:
            delta = np.linalg.solve(jacobian, -sigma)
        except np.linalg.LinAlgError as e:
            raise ConvergenceError(f"singular modulation Jacobian at {x}: {e}", iteration) from e
        current = float(np.linalg.norm(sigma))
        step = 1.0
        while step >= 1.0 / 1024:
            trial = x + step * delta
            if _admissible(trial):
                trial_sigma = orthogonality_map(u, ps, trial)
                if np.linalg.norm(trial_sigma) < current:
                    break
            step *= 0.5
        else:
            raise ConvergenceError(f"Newton line search stalled at {x} (|sigma| {current:.2e})", iteration, current)
        x, sigma = trial, trial_sigma
    eps = ComplexField(ps.grid, residual(u, ps, x))
    state = ModulationState.from_vector(x, eps=eps, ortho_residuals=tuple(float(s) for s in sigma), iterations=iteration)
    logger.debug(f"Decomposition: lam={x[0]:.10g}, b={x[3]:.3e}, v={x[4]:.3e} after {iteration} steps")
    return state


def estimate_state(snapshot):
    """Starting guess for decompose: scale, centre and peak phase of the snapshot, b = v = 0."""
    grid = snapshot.field.grid
    values = snapshot.field.values
    frame = snapshot.frame
    peak = int(np.argmax(np.abs(values)))
    return ModulationState(
        lam=frame.scale * concentration_length(grid, values),
        alpha=frame.shift + frame.scale * barycentre(grid, values),
        gamma=float(np.angle(values[peak])),
    )


def reconstruct(ps, state, grid):
    """lam^{-1/2} (Q_P + eps)((x - alpha) / lam) e^{i gamma} sampled on ``grid``."""
    params = state.params
    inner = ps.sigma(params) + 1j * ps.theta(params)
    if state.eps is not None:
        inner = inner + state.eps.values
    shift = -state.alpha / state.lam
    values = resample_values(ps.grid, inner, grid, 1.0 / state.lam, shift, periodic=False)
    return ComplexField(grid, values * np.exp(1j * state.gamma) / math.sqrt(state.lam))


@dataclass(frozen=True)
class ModVector:
    time: float
    s: float
    values: tuple
    errors: tuple
    ratio: float


@dataclass
class TrackResult:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    s: np.ndarray = None
    mod: list = field(default_factory=list)
    failure: str = None

    def series(self, name):
        return np.array([getattr(state, name) for state in self.states])

    def rows(self):
        rows = []
        for i, (t, state) in enumerate(zip(self.times, self.states)):
            mod = self.mod[i] if i < len(self.mod) else None
            eps = state.eps
            row = {
                "t": t,
                "s": float(self.s[i]) if self.s is not None else math.nan,
                "lambda": state.lam,
                "alpha": state.alpha,
                "gamma": state.gamma,
                "b": state.b,
                "v": state.v,
                "eps_L2": l2_norm(eps.grid, eps.values) if eps is not None else math.nan,
                "eps_H12": sobolev_norm(eps, 0.5) if eps is not None else math.nan,
            }
            for j in range(5):
                row[f"mod{j + 1}"] = mod.values[j] if mod else math.nan
            row["mod_error"] = max(mod.errors) if mod else math.nan
            rows.append(row)
        return rows


def rescaled_time(times, lam):
    """s(t) with ds/dt = 1/lam, trapezoid rule from the first sample."""
    times = np.asarray(times, dtype=float)
    inverse = 1.0 / np.asarray(lam, dtype=float)
    increments = 0.5 * (inverse[1:] + inverse[:-1]) * np.diff(times)
    return np.concatenate([[0.0], np.cumsum(increments)])


def _five_point(s, y):
    """Derivative from a local quartic through five consecutive samples; NaN at the two ends."""
    out = np.full(len(s), math.nan)
    for k in range(2, len(s) - 2):
        window = slice(k - 2, k + 3)
        coeffs = np.polyfit(s[window] - s[k], y[window], 4)
        out[k] = coeffs[-2]
    return out


def _derivatives(s, y):
    three = np.gradient(y, s, edge_order=2)
    five = _five_point(s, y)
    error = np.where(np.isnan(five), np.abs(three - np.gradient(y, s, edge_order=1)), np.abs(three - five))
    return three, error


def mod_vectors(times, states):
    """Centered-difference estimate of Mod in rescaled time with per-component error bars."""
    if len(states) < 3:
        return None, []
    lam = np.array([state.lam for state in states])
    alpha = np.array([state.alpha for state in states])
    gamma = np.unwrap(np.array([state.gamma for state in states]))
    b = np.array([state.b for state in states])
    v = np.array([state.v for state in states])
    s = rescaled_time(times, lam)
    b_s, b_err = _derivatives(s, b)
    gamma_s, gamma_err = _derivatives(s, gamma)
    log_lam_s, lam_err = _derivatives(s, np.log(lam))
    alpha_s, alpha_err = _derivatives(s, alpha)
    v_s, v_err = _derivatives(s, v)
    out = []
    for k, state in enumerate(states):
        values = (
            b_s[k] + 0.5 * b[k] ** 2,
            gamma_s[k] - 1.0,
            log_lam_s[k] + b[k],
            alpha_s[k] / lam[k] - v[k],
            v_s[k] + b[k] * v[k],
        )
        errors = (b_err[k], gamma_err[k], lam_err[k], alpha_err[k] / lam[k], v_err[k])
        eps_sq = l2_norm(state.eps.grid, state.eps.values) ** 2 if state.eps is not None else 0.0
        scale = lam[k] ** 2 + b[k] ** 4 + v[k] ** 2 + eps_sq
        ratio = float(np.linalg.norm(values)) / scale if scale > 0.0 else math.inf
        out.append(ModVector(float(times[k]), float(s[k]), tuple(float(x) for x in values), tuple(float(x) for x in errors), ratio))
    return s, out


def track(trajectory, ps, guess=None):
    """Decompose every snapshot, warm-starting each Newton solve from the previous state.

    Snapshots carrying a Frame are decomposed in working coordinates and reported physically.
    A failed decomposition truncates the series there.
    """
    result = TrackResult()
    if not trajectory.snapshots:
        return result
    previous = guess or estimate_state(trajectory.snapshots[0])
    for snapshot in trajectory.snapshots:
        try:
            working = decompose(snapshot.field, ps, previous.to_frame(snapshot.frame))
        except HalfwaveError as e:
            result.failure = f"t={snapshot.time:.12g}: {e}"
            logger.error(f"Tracking stopped at t={snapshot.time:.12g}: {e}")
            break
        state = working.from_frame(snapshot.frame)
        result.times.append(snapshot.time)
        result.states.append(state)
        previous = state
    result.s, result.mod = mod_vectors(result.times, result.states)
    logger.info(f"Tracked {len(result.states)} of {len(trajectory.snapshots)} snapshots")
    return result


def modulation_law_ratios(result):
    """(b_s / b^2, v_s / (b v)) along the tracked series."""
    b = result.series("b")
    v = result.series("v")
    b_s = np.gradient(b, result.s, edge_order=2)
    v_s = np.gradient(v, result.s, edge_order=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        return b_s / b ** 2, v_s / (b * v)


def blowup_constants(ps, energy, momentum=0.0):
    """(C0, D0) for prescribed energy E0 > 0 and momentum P0."""
    if not energy > 0.0:
        raise ConfigError(f"blowup energy E0 must be positive, got {energy}")
    return math.sqrt(ps.e1 / energy), momentum / ps.p1


def prescribed_state(ps, t, energy, momentum=0.0, phase=0.0, shift=0.0):
    """Modulation parameters of the minimal-mass construction at time t < 0."""
    if not t < 0.0:
        raise ConfigError(f"initial time must be negative, got {t}")
    c0, d0 = blowup_constants(ps, energy, momentum)
    c0_sq = c0 * c0
    return ModulationState(
        lam=t * t / (4.0 * c0_sq),
        alpha=shift,
        gamma=phase - 4.0 * c0_sq / t,
        b=-t / (2.0 * c0_sq),
        v=d0 * t * t / (2.0 * c0),
    )


def minimal_mass_initial_data(ps, t, energy, momentum=0.0, phase=0.0, shift=0.0, grid=None):
    """lam^{-1/2} Q_P((x - alpha) / lam) e^{i gamma} at time t, with its prescribed parameters.

    Without ``grid`` the field lives on the profile grid stretched by lam, where the
    sampling is exact.
    """
    state = prescribed_state(ps, t, energy, momentum, phase, shift)
    params = state.params
    values = ps.sigma(params) + 1j * ps.theta(params)
    if grid is None:
        if state.alpha != 0.0:
            values = translate(ps.grid, values, state.alpha / state.lam)
        target = ps.grid.scaled(state.lam)
        field_ = ComplexField(target, values * np.exp(1j * state.gamma) / math.sqrt(state.lam))
    else:
        field_ = reconstruct(ps, state, grid)
    logger.info(
        f"Minimal-mass data at t={t:g}: lam={state.lam:.6e}, b={state.b:.6f}, v={state.v:.3e}, gamma={state.gamma:.6f}"
    )
    return field_, state
