"""Periodic pseudospectral fields on a large box.

A Grid is a uniform periodic truncation of the line, n nodes on [-L/2, L/2).
Public operations take and return ComplexField values. The underscore-free
array helpers (``dpow``, ``grad``, ``lambda_op``, ...) work on bare numpy arrays
and are what the solver modules call in their inner loops.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.fft as sfft
from scipy.signal import czt
from scipy.special import roots_legendre

from src.errors import ConfigError, ConvergenceError, GridError, NumericalCorruptionError

logger = logging.getLogger(__name__)

MIN_NODES = 8
MAX_NODES = 2 ** 24
MIN_BOX = 1.0
MAX_BOX = 1e6
TAIL_RATIO = 1e-6
SMOOTHING_PREFACTOR = math.sqrt(2.0 / math.pi)

_workers = 1
_tail_warned = set()


def set_workers(count):
    """Worker threads handed to every scipy.fft call."""
    global _workers
    _workers = max(1, int(count))


def _frozen(array):
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Grid:
    n: int
    box_length: float

    @cached_property
    def spacing(self):
        return self.box_length / self.n

    @cached_property
    def nodes(self):
        return _frozen(-0.5 * self.box_length + self.spacing * np.arange(self.n))

    @cached_property
    def wavenumbers(self):
        # FFT order; index n/2 carries the Nyquist mode -pi n / L
        return _frozen(2.0 * np.pi * sfft.fftfreq(self.n, d=self.spacing))

    @cached_property
    def abs_wavenumbers(self):
        return _frozen(np.abs(self.wavenumbers))

    @cached_property
    def odd_wavenumbers(self):
        k = self.wavenumbers.copy()
        k[self.n // 2] = 0.0
        return _frozen(k)

    def fft(self, values):
        return sfft.fft(values, workers=_workers)

    def ifft(self, coeffs):
        return sfft.ifft(coeffs, workers=_workers)

    def scaled(self, factor):
        """Same node count, box stretched by ``factor``; used for exact dilations."""
        return Grid(self.n, self.box_length * factor)

    def describe(self):
        return f"n={self.n}, L={self.box_length:g}"


def make_grid(n, box_length):
    if isinstance(n, bool) or not float(n).is_integer():
        raise GridError(f"node count must be an integer, got {n!r}")
    n = int(n)
    if n < MIN_NODES or n > MAX_NODES or n & (n - 1):
        raise GridError(f"node count must be a power of two in [{MIN_NODES}, {MAX_NODES}], got {n}")
    length = float(box_length)
    if not math.isfinite(length) or not MIN_BOX <= length <= MAX_BOX:
        raise GridError(f"box length must lie in [{MIN_BOX:g}, {MAX_BOX:g}], got {box_length}")
    return Grid(n, length)


def check_same_grid(*fields):
    grid = fields[0].grid
    for field in fields[1:]:
        if field.grid != grid:
            raise GridError(f"grid mismatch: {grid.describe()} vs {field.grid.describe()}")
    return grid


@dataclass(frozen=True, eq=False)
class ComplexField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.complex128)
        if values.shape != (self.grid.n,):
            raise GridError(f"field has shape {values.shape}, grid expects ({self.grid.n},)")
        if not np.isfinite(values).all():
            raise NumericalCorruptionError("field contains NaN or Inf samples")
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def from_function(cls, grid, func):
        return cls(grid, func(grid.nodes))

    @property
    def real(self):
        return self.values.real

    @property
    def imag(self):
        return self.values.imag

    def with_values(self, values):
        return ComplexField(self.grid, values)

    def __add__(self, other):
        check_same_grid(self, other)
        return ComplexField(self.grid, self.values + other.values)

    def __sub__(self, other):
        check_same_grid(self, other)
        return ComplexField(self.grid, self.values - other.values)

    def __mul__(self, scalar):
        return ComplexField(self.grid, self.values * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return ComplexField(self.grid, -self.values)


@dataclass(frozen=True)
class ConservedTriple:
    mass: float
    energy: float
    momentum: float


# --- array-level operators -------------------------------------------------

def multiply(grid, values, symbol, hermitian=True):
    """Apply a Fourier multiplier. Real input stays real when the symbol is Hermitian."""
    out = grid.ifft(symbol * grid.fft(values))
    if hermitian and np.isrealobj(values):
        return out.real
    return out


def dpow_symbol(grid, s):
    k = grid.abs_wavenumbers
    if s == 0:
        return np.ones(grid.n)
    symbol = np.zeros(grid.n)
    nonzero = k > 0
    symbol[nonzero] = k[nonzero] ** s
    return symbol


def dpow(grid, values, s=1.0):
    if s == 0:
        return np.array(values, copy=True)
    if s < 0:
        coeffs = grid.fft(values)
        scale = np.linalg.norm(coeffs)
        if abs(coeffs[0]) > 1e-12 * max(scale, 1e-300):
            raise ConfigError(
                f"D^{s:g} is unbounded on the zero mode and the field has mean {coeffs[0].real / grid.n:.3e}"
            )
    return multiply(grid, values, dpow_symbol(grid, s))


def grad(grid, values):
    return multiply(grid, values, 1j * grid.odd_wavenumbers)


def _check_tail(grid, values, label):
    magnitude = np.abs(values)
    peak = magnitude.max()
    if peak == 0.0:
        return
    edge = max(magnitude[0], magnitude[-1])
    key = (grid, label)
    if edge > TAIL_RATIO * peak and key not in _tail_warned:
        _tail_warned.add(key)
        logger.warning(
            f"{label}: edge amplitude {edge / peak:.1e} of peak on {grid.describe()}; periodic images are not negligible"
        )


def lambda_op(grid, values):
    _check_tail(grid, values, "scaling generator")
    return 0.5 * values + grid.nodes * grad(grid, values)


def inner(grid, f, g):
    """Complex L2 pairing, integral of f times conj(g)."""
    return grid.spacing * np.vdot(g, f)


def real_inner(grid, f, g):
    return float(np.real(inner(grid, f, g)))


def l2_norm(grid, values):
    return math.sqrt(grid.spacing * float(np.sum(np.abs(values) ** 2)))


def half_norm_sq(grid, values):
    """||D^{1/2} u||^2 summed on the Fourier side."""
    coeffs = grid.fft(values)
    return grid.spacing / grid.n * float(np.sum(grid.abs_wavenumbers * np.abs(coeffs) ** 2))


def momentum_values(grid, values):
    integrand = -1j * grad(grid, values) * np.conj(values)
    total = grid.spacing * np.sum(integrand)
    mass = grid.spacing * float(np.sum(np.abs(values) ** 2))
    if abs(total.imag) > 1e-8 * (mass + 1.0):
        raise NumericalCorruptionError(f"momentum quadrature has imaginary part {total.imag:.3e}")
    return float(total.real)


def conserved_values(grid, values):
    density = np.abs(values) ** 2
    mass = grid.spacing * float(np.sum(density))
    energy = 0.5 * half_norm_sq(grid, values) - 0.25 * grid.spacing * float(np.sum(density ** 2))
    return ConservedTriple(mass, energy, momentum_values(grid, values))


def _pad(grid, values):
    coeffs = grid.fft(values)
    half = grid.n // 2
    padded = np.zeros(2 * grid.n, dtype=np.complex128)
    padded[:half] = coeffs[:half]
    padded[-half:] = coeffs[half:]
    return sfft.ifft(padded, workers=_workers) * 2.0


def _truncate(grid, padded_values):
    coeffs = sfft.fft(padded_values, workers=_workers)
    half = grid.n // 2
    return grid.ifft(np.concatenate([coeffs[:half], coeffs[-half:]]) * 0.5)


def triple_product(grid, f, g, h, dealias=True):
    """f * g * h; with ``dealias`` the product is formed on a 2n grid and truncated."""
    real = np.isrealobj(f) and np.isrealobj(g) and np.isrealobj(h)
    if dealias:
        out = _truncate(grid, _pad(grid, f) * _pad(grid, g) * _pad(grid, h))
    else:
        out = np.asarray(f * g * h, dtype=np.complex128)
    return out.real if real else out


def cubic(grid, values, dealias=True):
    """|u|^2 u."""
    return triple_product(grid, values, values, np.conj(values), dealias=dealias)


def dealias_mask(grid):
    """Two-thirds rule: keep |k| below 2/3 of the Nyquist wavenumber."""
    return grid.abs_wavenumbers < (2.0 / 3.0) * (np.pi * grid.n / grid.box_length)


def density(grid, values, dealias=True):
    """|u|^2, spectrally filtered by the two-thirds rule when ``dealias`` is set.

    The result depends on |u| only, so phase rotations leave it unchanged.
    """
    rho = np.abs(values) ** 2
    if not dealias:
        return rho
    return multiply(grid, rho, dealias_mask(grid))


def translate(grid, values, shift):
    """u(x - shift) by spectral phase shift, Nyquist kept real."""
    symbol = np.exp(-1j * grid.wavenumbers * shift)
    nyquist = grid.n // 2
    symbol[nyquist] = math.cos(grid.wavenumbers[nyquist] * shift)
    return multiply(grid, values, symbol)


def evaluate_uniform(grid, values, start, step, count, periodic=True):
    """Trigonometric interpolant of ``values`` at start + j*step, j < count, via chirp-z."""
    coeffs = sfft.fftshift(grid.fft(values))
    coeffs[0] = 0.0
    length = grid.box_length
    theta0 = 2.0 * np.pi * (start + 0.5 * length) / length
    delta = 2.0 * np.pi * step / length
    sums = czt(coeffs, m=count, w=np.exp(1j * delta), a=np.exp(-1j * theta0))
    theta = theta0 + delta * np.arange(count)
    out = sums * np.exp(-0.5j * grid.n * theta) / grid.n
    if not periodic:
        points = start + step * np.arange(count)
        out[(points < -0.5 * length) | (points >= 0.5 * length)] = 0.0
    return out.real if np.isrealobj(values) else out


def resample_values(grid, values, target, scale=1.0, shift=0.0, periodic=True):
    """Samples of y -> f(scale*y + shift) on the nodes of ``target``."""
    start = scale * target.nodes[0] + shift
    return evaluate_uniform(grid, values, start, scale * target.spacing, target.n, periodic=periodic)


# --- public field operations -----------------------------------------------

def fractional_derivative(f, s):
    if s < -1:
        raise ConfigError(f"fractional order must be >= -1, got {s}")
    return f.with_values(dpow(f.grid, f.values, s))


def gradient(f):
    return f.with_values(grad(f.grid, f.values))


def scaling_generator(f):
    return f.with_values(lambda_op(f.grid, f.values))


def conserved(f):
    return conserved_values(f.grid, f.values)


def sobolev_norm(f, s):
    if not -2.0 <= s <= 4.0:
        raise ConfigError(f"Sobolev order must lie in [-2, 4], got {s}")
    grid = f.grid
    coeffs = grid.fft(f.values)
    weight = (1.0 + grid.wavenumbers ** 2) ** s
    return math.sqrt(grid.spacing / grid.n * float(np.sum(weight * np.abs(coeffs) ** 2)))


def homogeneous_norm(f, s):
    if not -2.0 <= s <= 4.0:
        raise ConfigError(f"Sobolev order must lie in [-2, 4], got {s}")
    grid = f.grid
    coeffs = grid.fft(f.values)
    weight = dpow_symbol(grid, 2.0 * s)
    if s < 0:
        weight[0] = 0.0
    return math.sqrt(grid.spacing / grid.n * float(np.sum(weight * np.abs(coeffs) ** 2)))


def resolvent_symbol(grid, s):
    if s <= 0:
        raise ConfigError(f"resolvent parameter must be positive, got {s}")
    return SMOOTHING_PREFACTOR / (grid.wavenumbers ** 2 + s)


def resolvent_smooth(f, s):
    return f.with_values(multiply(f.grid, f.values, resolvent_symbol(f.grid, s)))


def dealiased_triple_product(f, g, h, dealias=True):
    grid = check_same_grid(f, g, h)
    return ComplexField(grid, triple_product(grid, f.values, g.values, h.values, dealias=dealias))


def resample(f, target, scale=1.0, shift=0.0, periodic=True):
    return ComplexField(target, resample_values(f.grid, f.values, target, scale, shift, periodic))


@lru_cache(maxsize=None)
def _half_line_rule(count):
    x, w = roots_legendre(count)
    theta = 0.25 * np.pi * (x + 1.0)
    tan = np.tan(theta)
    weights = 0.25 * np.pi * w * 2.0 * tan / np.cos(theta) ** 2
    return _frozen(tan ** 2), _frozen(weights)


@dataclass(frozen=True)
class SQuadrature:
    """Gauss-Legendre in theta for integrals over s in (0, inf), s = tan^2 theta.

    The node count doubles until the relative change drops below ``tolerance``.
    """

    nodes: int = 64
    tolerance: float = 1e-8
    max_nodes: int = 4096

    def rule(self, count):
        return _half_line_rule(int(count))

    def _sum(self, integrand, count):
        s, weights = self.rule(count)
        return float(sum(weight * integrand(node) for node, weight in zip(s, weights)))

    def integrate(self, integrand):
        count = self.nodes
        previous = self._sum(integrand, count)
        while True:
            count *= 2
            if count > self.max_nodes:
                raise ConvergenceError(
                    f"s-quadrature did not settle to {self.tolerance:.1e} within {self.max_nodes} nodes"
                )
            current = self._sum(integrand, count)
            change = abs(current - previous)
            if change <= self.tolerance * abs(current) or change <= 1e-300:
                if count > 2 * self.nodes:
                    logger.debug(f"s-quadrature needed {count} nodes")
                return current
            previous = current


def smoothing_identity(f, quadrature=None):
    """(s-integral of sqrt(s)*||grad f_s||^2, ||D^{1/2} f||^2)."""
    quadrature = quadrature or SQuadrature()
    grid = f.grid
    coeffs = grid.fft(f.values)
    power = grid.spacing / grid.n * np.abs(coeffs) ** 2
    total = float(power.sum())
    rhs = float(np.sum(grid.abs_wavenumbers * power))
    if rhs == 0.0:
        return 0.0, 0.0
    top = grid.abs_wavenumbers >= 0.875 * grid.abs_wavenumbers.max()
    if power[top].sum() > 1e-10 * total:
        logger.warning("smoothing identity: field is not band-limited; quadrature error may dominate")
    k2 = grid.wavenumbers ** 2
    weighted = SMOOTHING_PREFACTOR ** 2 * k2 * power

    def integrand(s):
        return math.sqrt(s) * float(np.sum(weighted / (k2 + s) ** 2))

    return quadrature.integrate(integrand), rhs
