"""Localized virial functional and the localized linearized forms.

The weight phi is even and convex with phi'(x) = x on [0, 1] and
phi'(x) = 3 - e^{-|x|} for |x| >= 2. On (1, 2) phi' is the quintic matching
phi', phi'' and phi''' at both ends.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from src.errors import ConfigError, GridError
from src.linearized import constrained_minimum, half_norm_matrix
from src.modulation import reconstruct
from src.spectral import SQuadrature, cubic, grad, half_norm_sq, resolvent_symbol

logger = logging.getLogger(__name__)

_TAIL = math.exp(-2.0)


def _blend_coefficients():
    """(A, B, C) in phi'(1 + t) = 1 + t + A t^3 + B t^4 + C t^5, fixed by phi'(2), phi''(2) and phi'''(2)."""
    matrix = np.array([[1.0, 1.0, 1.0], [3.0, 4.0, 5.0], [6.0, 12.0, 20.0]])
    rhs = np.array([(3.0 - _TAIL) - 2.0, _TAIL - 1.0, -_TAIL])
    return np.linalg.solve(matrix, rhs)


BLEND_COEFFICIENTS = _blend_coefficients()


def phi_prime(x):
    x = np.asarray(x, dtype=float)
    a, b, c = BLEND_COEFFICIENTS
    r = np.abs(x)
    t = np.clip(r - 1.0, 0.0, 1.0)
    middle = 1.0 + t + a * t ** 3 + b * t ** 4 + c * t ** 5
    out = np.where(r <= 1.0, r, np.where(r >= 2.0, 3.0 - np.exp(-r), middle))
    return np.sign(x) * out


def phi_second(x):
    x = np.asarray(x, dtype=float)
    a, b, c = BLEND_COEFFICIENTS
    r = np.abs(x)
    t = np.clip(r - 1.0, 0.0, 1.0)
    middle = 1.0 + 3.0 * a * t ** 2 + 4.0 * b * t ** 3 + 5.0 * c * t ** 4
    return np.where(r <= 1.0, 1.0, np.where(r >= 2.0, np.exp(-r), middle))


@dataclass(frozen=True)
class VirialConfig:
    radius: float = 10.0
    quadrature: SQuadrature = field(default_factory=SQuadrature)
    dense_limit: int = 2048

    def __post_init__(self):
        if not self.radius >= 1.0:
            raise ConfigError(f"virial.radius must be at least 1, got {self.radius}")


def localized_weight(grid, radius):
    """phi''(x / A) on the grid nodes."""
    return phi_second(grid.nodes / radius)


def virial_value(ut, w, state, cfg):
    """The localized virial quantity for the remainder ``ut`` around the approximate solution ``w``."""
    grid = ut.grid
    if w.grid != grid:
        raise ConfigError("remainder and approximate solution must share a grid")
    u = ut.values
    base = w.values
    dx = grid.spacing
    kinetic = 0.5 * half_norm_sq(grid, u)
    mass = 0.5 * dx * float(np.sum(np.abs(u) ** 2)) / state.lam
    full = np.abs(base + u) ** 4
    potential = 0.25 * dx * float(np.sum(full - np.abs(base) ** 4))
    linear = dx * float(np.sum(np.real(cubic(grid, base, dealias=False) * np.conj(u))))
    a = cfg.radius
    weight = a * phi_prime((grid.nodes - state.alpha) / (a * state.lam))
    momentum = 0.5 * state.b * dx * float(np.sum(np.imag(weight * grad(grid, u) * np.conj(u))))
    return kinetic + mass - (potential - linear) + momentum


def _smoothed_power(grid, values, weight, quadrature):
    coeffs = grid.fft(np.asarray(values, dtype=np.complex128))
    derivative = 1j * grid.wavenumbers * coeffs

    def integrand(s):
        smoothed = grid.ifft(resolvent_symbol(grid, s) * derivative)
        return math.sqrt(s) * grid.spacing * float(np.sum(weight * np.abs(smoothed) ** 2))

    return quadrature.integrate(integrand)


def localized_forms(eps, ps, radius, cfg=None):
    """(plus_form, minus_form): the localized quadratic forms of L+ and L- at eps."""
    cfg = cfg or VirialConfig(radius=radius)
    if radius < 1.0:
        raise ConfigError(f"localization radius must be at least 1, got {radius}")
    grid = eps.grid
    if grid != ps.grid:
        raise GridError(f"eps lives on {grid.describe()}, profiles on {ps.grid.describe()}")
    weight = localized_weight(grid, radius)
    q2 = ps.q ** 2
    dx = grid.spacing
    e1 = eps.real
    e2 = eps.imag
    plus = _smoothed_power(grid, e1, weight, cfg.quadrature) + dx * float(np.sum((1.0 - 3.0 * q2) * e1 ** 2))
    minus = _smoothed_power(grid, e2, weight, cfg.quadrature) + dx * float(np.sum((1.0 - q2) * e2 ** 2))
    return plus, minus


def localized_kernel(grid):
    """s-integrated kernel 2 xi eta / (|xi| + |eta|), zero where both vanish."""
    xi = grid.wavenumbers
    k = grid.abs_wavenumbers
    num = 2.0 * np.outer(xi, xi)
    den = np.add.outer(k, k)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0.0)
    return out


def localized_dense(grid, radius, dense_limit=2048):
    """Matrix of f -> the localized D-form, (1/dx) times the Gram matrix, for real f."""
    if grid.n > dense_limit:
        raise ConfigError(f"dense localized form limited to n <= {dense_limit}, got {grid.n}")
    weight = localized_weight(grid, radius)
    phases = np.exp(1j * np.outer(grid.nodes, grid.wavenumbers))
    weighted = phases.conj().T @ (weight[:, None] * phases)
    kernel = localized_kernel(grid) * weighted.T
    matrix = np.real(phases.conj() @ kernel @ phases.T) / grid.n ** 2
    return 0.5 * (matrix + matrix.T)


@dataclass(frozen=True)
class LocalizedCoercivityRow:
    radius: float
    plus_block: float
    minus_block: float

    @property
    def constant(self):
        return min(self.plus_block, self.minus_block)


def localized_coercivity(ps, radii, plus_ortho=None, minus_ortho=None, dense_limit=2048):
    """Constrained minima of both localized forms per radius, and the smallest radius A0
    from which every larger radius in the sweep is positive."""
    grid = ps.grid
    plus_ortho = [ps.q, ps.s1, ps.g1] if plus_ortho is None else plus_ortho
    minus_ortho = [ps.rho1] if minus_ortho is None else minus_ortho
    gram = half_norm_matrix(grid)
    q2 = ps.q ** 2
    rows = []
    for radius in sorted(float(a) for a in radii):
        if radius < 1.0:
            raise ConfigError(f"localization radius must be at least 1, got {radius}")
        dense = localized_dense(grid, radius, dense_limit)
        plus = constrained_minimum(dense + np.diag(1.0 - 3.0 * q2), gram, plus_ortho)
        minus = constrained_minimum(dense + np.diag(1.0 - q2), gram, minus_ortho)
        rows.append(LocalizedCoercivityRow(radius, plus, minus))
        logger.info(f"Localized coercivity at A={radius:g}: plus {plus:.4e}, minus {minus:.4e}")
    threshold = None
    for row in reversed(rows):
        if row.constant <= 0.0:
            break
        threshold = row.radius
    if threshold is None:
        logger.warning("No radius in the sweep gives a positive localized coercivity constant")
    return rows, threshold


def virial_series(result, trajectory, ps, cfg):
    """Physical virial value at every tracked snapshot."""
    out = []
    frames = {snapshot.time: snapshot for snapshot in trajectory.snapshots}
    for t, state in zip(result.times, result.states):
        snapshot = frames[t]
        working = state.to_frame(snapshot.frame)
        grid = snapshot.field.grid
        approximate = reconstruct(ps, replace(working, eps=None), grid)
        remainder = snapshot.field - approximate
        value = virial_value(remainder, approximate, working, cfg) / snapshot.frame.scale
        out.append((t, value))
    return out
