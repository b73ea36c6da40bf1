"""Approximate blowup profile Q_P = Sigma + i Theta and its correction hierarchy.

Every correction is a real scalar field with a parity tag. They are solved in
dependency order by constrained inversions of L+ (kernel Q') and L- (kernel Q).
Sigma and Theta are polynomials in (b, v) whose monomials are listed in
SIGMA_TERMS and THETA_TERMS.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from src.errors import ConfigError, ConvergenceError
from src.ground_states import SolverOpts, default_tail_window, solve_ground_state, tail_exponent
from src.linearized import make_operator, solvability_overlap, solve_constrained
from src.spectral import (
    ComplexField,
    Grid,
    conserved_values,
    cubic,
    dpow,
    grad,
    l2_norm,
    lambda_op,
    real_inner,
    sobolev_norm,
)

logger = logging.getLogger(__name__)

MAX_PARAMETER = 0.5

# (field, power of b, power of v)
SIGMA_TERMS = (("q", 0, 0), ("f2", 1, 1), ("t2", 2, 0), ("h2", 0, 2), ("r40", 4, 0))
THETA_TERMS = (("s1", 1, 0), ("g1", 0, 1), ("r30", 3, 0), ("r21", 2, 1))

PARITY = {
    "q": 1,
    "s1": 1,
    "t2": 1,
    "h2": 1,
    "r30": 1,
    "r40": 1,
    "rho1": 1,
    "rho2b": 1,
    "g1": -1,
    "f2": -1,
    "r21": -1,
    "rho2v": -1,
}

TRANSFORMS = ("lambda", "grad", "d")


@dataclass(frozen=True)
class ProfileParams:
    b: float = 0.0
    v: float = 0.0

    def __post_init__(self):
        for name in ("b", "v"):
            value = getattr(self, name)
            if not math.isfinite(value) or abs(value) > MAX_PARAMETER:
                raise ConfigError(f"profile parameter {name} must satisfy |{name}| <= {MAX_PARAMETER}, got {value}")

    @property
    def size(self):
        return abs(self.b) + abs(self.v)


def reflect(values):
    """f(-x) on the grid nodes; node 0 sits at -L/2, which is its own mirror image."""
    return np.roll(values[::-1], 1)


def parity_defect(values, parity):
    norm = np.linalg.norm(values)
    if norm == 0.0:
        return 0.0
    return float(np.linalg.norm(values - parity * reflect(values)) / norm)


@dataclass(eq=False)
class ProfileSet:
    ground: object
    fields: dict
    e1: float
    p1: float
    ground_energy: float = 0.0
    identities: dict = field(default_factory=dict)
    parity_defects: dict = field(default_factory=dict)
    tails: dict = field(default_factory=dict)
    transformed: dict = field(default_factory=dict, repr=False)

    @property
    def grid(self):
        return self.ground.grid

    def __getattr__(self, name):
        fields = self.__dict__.get("fields", {})
        if name in fields:
            return fields[name]
        raise AttributeError(name)

    def apply(self, name, transform):
        """Lambda, grad or D of a stored field; computed once."""
        key = (name, transform)
        if transform not in TRANSFORMS:
            raise ConfigError(f"unknown transform {transform!r}")
        if key not in self.transformed:
            values = self.fields[name]
            if transform == "lambda":
                out = lambda_op(self.grid, values)
            elif transform == "grad":
                out = grad(self.grid, values)
            else:
                out = dpow(self.grid, values, 1.0)
            out.setflags(write=False)
            self.transformed[key] = out
        return self.transformed[key]

    def polynomial(self, terms, params, transform=None, db=0, dv=0):
        """Sum of coefficient * field over ``terms``, differentiated db times in b and dv times in v."""
        out = np.zeros(self.grid.n)
        for name, i, j in terms:
            if i < db or j < dv:
                continue
            coefficient = (
                math.perm(i, db) * math.perm(j, dv) * params.b ** (i - db) * params.v ** (j - dv)
            )
            if coefficient == 0.0:
                continue
            values = self.fields[name] if transform is None else self.apply(name, transform)
            out = out + coefficient * values
        return out

    def sigma(self, params, transform=None, db=0, dv=0):
        return self.polynomial(SIGMA_TERMS, params, transform, db, dv)

    def theta(self, params, transform=None, db=0, dv=0):
        return self.polynomial(THETA_TERMS, params, transform, db, dv)

    def rho2(self, params):
        return params.b * self.fields["rho2b"] + params.v * self.fields["rho2v"]


def _check_ground(ground):
    if ground.residual_norm > 1e-8:
        raise ConvergenceError(
            f"profiles need a ground state with residual <= 1e-8, got {ground.residual_norm:.2e}",
            residual=ground.residual_norm,
        )


def build_profiles(ground, opts=None):
    """Solve the correction hierarchy about ``ground`` and record every identity residual."""
    opts = opts or SolverOpts()
    _check_ground(ground)
    grid = ground.grid
    q = ground.values
    plus = make_operator("plus", ground)
    minus = make_operator("minus", ground)
    dq = grad(grid, q)
    identities = {}

    def lam(f):
        return lambda_op(grid, f)

    def nabla(f):
        return grad(grid, f)

    def solve(op, rhs, name):
        kernel = [q] if op is minus else [dq]
        identities[f"{name} solvability"] = solvability_overlap(grid, rhs, kernel)
        return solve_constrained(op, rhs, kernel, opts, identity=f"{name} solvability")

    s1 = solve(minus, lam(q), "S1")
    g1 = solve(minus, -dq, "G1")
    f2 = solve(plus, g1 - lam(g1) + nabla(s1) + 2.0 * q * s1 * g1, "F2")
    t2 = solve(plus, 0.5 * s1 - lam(s1) + s1 * s1 * q, "T2")
    h2 = solve(plus, nabla(g1) + g1 * g1 * q, "H2")
    r30 = solve(minus, -t2 + lam(t2) + 2.0 * q * t2 * s1 + s1 ** 3, "R30")
    r40 = solve(
        plus, 1.5 * r30 - lam(r30) + 3.0 * q * t2 * t2 + 2.0 * q * s1 * r30 + s1 * s1 * t2, "R40"
    )
    r21 = solve(
        minus,
        -1.5 * f2 + lam(f2) - nabla(t2) + 2.0 * q * f2 * s1 + 2.0 * q * t2 * g1 + 3.0 * s1 * s1 * g1,
        "R21",
    )
    rho1 = solve(plus, s1, "rho1")
    rho2b = solve(minus, 2.0 * q * s1 * rho1 + lam(rho1) - 2.0 * t2, "rho2 b-generator")
    rho2v = solve(minus, 2.0 * q * g1 * rho1 + nabla(rho1) + f2, "rho2 v-generator")

    fields = {
        "q": q,
        "s1": s1,
        "g1": g1,
        "f2": f2,
        "t2": t2,
        "h2": h2,
        "r30": r30,
        "r40": r40,
        "r21": r21,
        "rho1": rho1,
        "rho2b": rho2b,
        "rho2v": rho2v,
    }
    for values in fields.values():
        values.setflags(write=False)

    minus_s1 = real_inner(grid, minus.matvec(s1), s1)
    minus_g1 = real_inner(grid, minus.matvec(g1), g1)
    e1 = 0.5 * minus_s1
    p1 = 2.0 * minus_g1
    q_rho1 = real_inner(grid, q, rho1)
    identities["T2 mass identity"] = abs(-real_inner(grid, q, t2) - 0.5 * real_inner(grid, s1, s1)) / (
        0.5 * real_inner(grid, s1, s1)
    )
    identities["Q rho1 identity"] = abs(q_rho1 + minus_s1) / abs(minus_s1)
    identities["S1 orthogonality"] = abs(real_inner(grid, s1, q)) / (l2_norm(grid, s1) * l2_norm(grid, q))
    identities["G1 orthogonality"] = abs(real_inner(grid, g1, q)) / (l2_norm(grid, g1) * l2_norm(grid, q))

    parity_defects = {name: parity_defect(values, PARITY[name]) for name, values in fields.items()}
    tails = {}
    window = default_tail_window(grid)
    for name, values in fields.items():
        try:
            tails[name] = tail_exponent(ComplexField(grid, values), window, PARITY[name])
        except ConfigError:
            tails[name] = math.nan

    ground_energy = conserved_values(grid, q).energy
    profile = ProfileSet(ground, fields, e1, p1, ground_energy, identities, parity_defects, tails)
    if e1 <= 0.0 or p1 <= 0.0:
        logger.warning(f"Profile constants have the wrong sign: e1={e1:.6e}, p1={p1:.6e}")
    logger.info(
        f"Profiles on {grid.describe()}: e1={e1:.10f}, p1={p1:.10f}, "
        f"worst identity {max(identities.values()):.2e}, worst parity {max(parity_defects.values()):.2e}"
    )
    return profile


def assemble_qp(ps, params):
    """Sigma_P + i Theta_P as a ComplexField."""
    return ComplexField(ps.grid, ps.sigma(params) + 1j * ps.theta(params))


def _complex(ps, params, transform=None, db=0, dv=0):
    return ps.sigma(params, transform, db, dv) + 1j * ps.theta(params, transform, db, dv)


def qp_derivatives(ps, params):
    """(d/db Q_P, d/dv Q_P) from the polynomial ansatz."""
    return _complex(ps, params, db=1), _complex(ps, params, dv=1)


def profile_residual(ps, params):
    """Defect Psi of the renormalized profile equation and its H^1 norm."""
    b, v = params.b, params.v
    grid = ps.grid
    qp = _complex(ps, params)
    d_b, d_v = qp_derivatives(ps, params)
    defect = (
        -0.5j * b * b * d_b
        - 1j * b * v * d_v
        - _complex(ps, params, "d")
        - qp
        + 1j * b * _complex(ps, params, "lambda")
        - 1j * v * _complex(ps, params, "grad")
        + cubic(grid, qp)
    )
    psi = ComplexField(grid, -defect)
    return psi, sobolev_norm(psi, 1.0)


@dataclass(frozen=True)
class ExpansionPoint:
    b: float
    v: float
    mass_defect: float
    energy_defect: float
    momentum_defect: float
    energy_scale: float
    momentum_scale: float


def invariant_expansion_report(ps, params):
    """Mass, energy and momentum of Q_P against their leading-order values at one (b, v).

    Energies are measured from E(Q) on the same grid, which vanishes up to the box-truncation floor.
    """
    grid = ps.grid
    values = _complex(ps, params)
    triple = conserved_values(grid, values)
    size = params.size
    b, v = params.b, params.v
    return ExpansionPoint(
        b=b,
        v=v,
        mass_defect=triple.mass - ps.ground.mass,
        energy_defect=triple.energy - ps.ground_energy - ps.e1 * b * b,
        momentum_defect=triple.momentum - ps.p1 * v,
        energy_scale=b ** 4 + v * v + abs(v) * size * size,
        momentum_scale=v * v + abs(v) * size + b ** 4,
    )


def fitted_order(parameters, values):
    """Least-squares slope of log|values| against log|parameters|."""
    x = np.log(np.abs(np.asarray(parameters, dtype=float)))
    y = np.log(np.abs(np.asarray(values, dtype=float)))
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class ExpansionOrders:
    axis: str
    points: list
    energy_order: float
    momentum_order: float
    mass_order: float
    passed: bool


def expansion_orders(ps, axis, values, energy_min=3.7, momentum_min=2.0):
    """Fitted orders of the invariant defects along a b or v sweep with the other parameter at 0."""
    if axis not in ("b", "v"):
        raise ConfigError(f"sweep axis must be 'b' or 'v', got {axis!r}")
    points = [invariant_expansion_report(ps, ProfileParams(**{axis: value})) for value in values]
    energy = fitted_order(values, [p.energy_defect for p in points]) if axis == "b" else math.nan
    momentum = fitted_order(values, [p.momentum_defect for p in points]) if axis == "v" else math.nan
    mass = fitted_order(values, [p.mass_defect for p in points])
    passed = energy >= energy_min if axis == "b" else momentum >= momentum_min
    if axis == "v":
        passed = passed and all(p.mass_defect < 0.0 for p in points)
    logger.info(f"Invariant expansion along {axis}: energy {energy:.2f}, momentum {momentum:.2f}, mass {mass:.2f}")
    return ExpansionOrders(axis, points, energy, momentum, mass, passed)


@dataclass(frozen=True)
class ResidualRow:
    b: float
    v: float
    l2: float
    h1: float
    resolved: float = math.nan


def resolved_residual(ps, params, rest=None):
    """L2 norm of Psi_P - Psi_0 with the Q-component of its imaginary part removed.

    Constrained L- solves drop the small kernel overlaps left by the box truncation; they return
    in Psi as multiples of iQ at the order of the corresponding monomial.
    """
    grid = ps.grid
    if rest is None:
        rest, _ = profile_residual(ps, ProfileParams())
    delta = profile_residual(ps, params)[0].values - rest.values
    unit = ps.q / l2_norm(grid, ps.q)
    delta = delta - 1j * real_inner(grid, delta.imag, unit) * unit
    return l2_norm(grid, delta)


def residual_sweep(ps, axis, values):
    """||Psi_P|| in L2 and H^1 along one axis with the other parameter at 0."""
    if axis not in ("b", "v"):
        raise ConfigError(f"sweep axis must be 'b' or 'v', got {axis!r}")
    rest, _ = profile_residual(ps, ProfileParams())
    rows = []
    for value in values:
        params = ProfileParams(**{axis: float(value)})
        psi, h1 = profile_residual(ps, params)
        resolved = resolved_residual(ps, params, rest)
        rows.append(ResidualRow(params.b, params.v, l2_norm(ps.grid, psi.values), h1, resolved))
    return rows


def mass_second_derivative(ps):
    """2[(S1, S1) + 2(Q, T2)], the b-curvature of the mass at P = 0."""
    grid = ps.grid
    return 2.0 * (real_inner(grid, ps.s1, ps.s1) + 2.0 * real_inner(grid, ps.q, ps.t2))


@dataclass(frozen=True)
class ExtrapolatedConstant:
    name: str
    values: tuple
    limit: float


def extrapolate_constants(spacing=1.0 / 16.0, lengths=(128.0, 256.0, 512.0), opts=None):
    """mass(Q), e1 and p1 at growing box length and fixed spacing, extrapolated assuming an L^-1 error."""
    opts = opts or SolverOpts()
    samples = {"mass": [], "e1": [], "p1": []}
    for length in lengths:
        n = int(round(length / spacing))
        grid = Grid(n, float(length))
        ground = solve_ground_state(grid, opts)
        ps = build_profiles(ground, opts)
        samples["mass"].append(ground.mass)
        samples["e1"].append(ps.e1)
        samples["p1"].append(ps.p1)
    l1, l2 = lengths[-2], lengths[-1]
    out = []
    for name, values in samples.items():
        f1, f2 = values[-2], values[-1]
        limit = (l2 * f2 - l1 * f1) / (l2 - l1)
        out.append(ExtrapolatedConstant(name, tuple(values), limit))
        logger.info(f"{name}: {', '.join(f'{x:.10f}' for x in values)} -> {limit:.10f}")
    return out
