"""Linearized operators about the ground state.

L+ = D + 1 - 3Q^2 acts on real parts of perturbations, L- = D + 1 - Q^2 on
imaginary parts. Constrained solves invert them on the complement of a kernel
span; small grids use a dense factorization, larger ones MINRES.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, minres

from src.errors import ConfigError, ConvergenceError, GridError, SolvabilityError
from src.ground_states import SolverOpts
from src.spectral import (
    ComplexField,
    Grid,
    dpow,
    grad,
    l2_norm,
    lambda_op,
    real_inner,
    sobolev_norm,
    triple_product,
)

logger = logging.getLogger(__name__)

POTENTIAL_WEIGHT = {"plus": 3.0, "minus": 1.0}

# periodic images of the x^-2 tail leave kernel overlaps of order L^-2
SOLVABILITY_FLOOR = 64.0
REFINEMENT_STEPS = 3


@dataclass(frozen=True, eq=False)
class LinearizedOperator:
    kind: str
    q: ComplexField

    def __post_init__(self):
        if self.kind not in POTENTIAL_WEIGHT:
            raise ConfigError(f"operator kind must be 'plus' or 'minus', got {self.kind!r}")

    @property
    def grid(self):
        return self.q.grid

    @cached_property
    def potential(self):
        q = self.q.real
        return POTENTIAL_WEIGHT[self.kind] * q * q

    def matvec(self, values):
        q = self.q.real
        weight = POTENTIAL_WEIGHT[self.kind]
        return dpow(self.grid, values, 1.0) + values - weight * triple_product(self.grid, q, q, values)

    @cached_property
    def dense(self):
        grid = self.grid
        column = grid.ifft(grid.abs_wavenumbers).real
        matrix = sla.circulant(column)
        matrix[np.diag_indices(grid.n)] += 1.0 - self.potential
        return matrix

    @cached_property
    def factor_cache(self):
        return {}


def make_operator(kind, ground):
    q = ground.q if hasattr(ground, "q") else ground
    return LinearizedOperator(kind, q)


def apply(op, f):
    if f.grid != op.grid:
        raise GridError(f"operator lives on {op.grid.describe()}, field on {f.grid.describe()}")
    return f.with_values(op.matvec(f.values))


def _orthonormal(grid, kernel):
    """Euclidean-orthonormal columns spanning the kernel."""
    if not kernel:
        return np.zeros((grid.n, 0))
    columns = np.column_stack([np.real(np.asarray(k)) for k in kernel])
    basis, _ = np.linalg.qr(columns)
    return basis


def solvability_threshold(grid, opts):
    """Abort level for kernel overlaps: the configured tolerance, floored by the box truncation."""
    return max(opts.solvability_tolerance, SOLVABILITY_FLOOR / grid.box_length ** 2)


def solvability_overlap(grid, rhs, kernel):
    """Largest |(rhs, k)| / (||rhs|| ||k||) over the kernel vectors."""
    norm = l2_norm(grid, rhs)
    if norm == 0.0:
        return 0.0
    return max((abs(real_inner(grid, rhs, k)) / (norm * l2_norm(grid, k)) for k in kernel), default=0.0)


def solve_constrained(op, rhs, kernel=(), opts=None, identity=None):
    """Unique solution of L x = rhs orthogonal to ``kernel``.

    ``rhs`` may be a ComplexField or a real array; the result has the same kind.
    """
    opts = opts or SolverOpts()
    grid = op.grid
    as_field = isinstance(rhs, ComplexField)
    if as_field and rhs.grid != grid:
        raise GridError(f"operator lives on {grid.describe()}, rhs on {rhs.grid.describe()}")
    values = rhs.values if as_field else np.asarray(rhs)
    kernel = [np.real(k.values if isinstance(k, ComplexField) else np.asarray(k)) for k in kernel]
    if np.iscomplexobj(values) and np.any(values.imag != 0.0):
        solution = _solve_real(op, values.real, kernel, opts, identity) + 1j * _solve_real(
            op, values.imag, kernel, opts, identity
        )
    else:
        solution = _solve_real(op, np.real(values), kernel, opts, identity)
    return ComplexField(grid, solution) if as_field else solution


def _solve_real(op, rhs, kernel, opts, identity):
    grid = op.grid
    overlap = solvability_overlap(grid, rhs, kernel)
    label = identity or f"rhs orthogonal to ker L{'+' if op.kind == 'plus' else '-'}"
    threshold = solvability_threshold(grid, opts)
    if overlap > threshold:
        raise SolvabilityError(label, overlap, threshold)
    if overlap > 0.1 * threshold:
        logger.warning(f"Solvability margin for '{label}' is thin: overlap {overlap:.2e}")
    basis = _orthonormal(grid, kernel)

    def project(x):
        return x - basis @ (basis.T @ x)

    target = project(rhs)
    if grid.n <= opts.dense_limit:
        factors = _factor(op, basis)
        x = project(sla.lu_solve(factors, target))
        # the factored matrix uses the pointwise potential, matvec the dealiased product
        for _ in range(REFINEMENT_STEPS):
            x = project(x + sla.lu_solve(factors, target - project(op.matvec(x))))
    else:
        x = project(_krylov(op, target, basis, project, opts))
    residual = l2_norm(grid, project(op.matvec(x)) - target)
    scale = max(l2_norm(grid, rhs), 1e-300)
    if residual > 1e-8 * scale:
        raise ConvergenceError(f"constrained solve for '{label}' left residual {residual / scale:.2e}", residual=residual)
    return x


def _factor(op, basis):
    """LU factors of P A P + E E^T, cached on the operator per kernel span."""
    key = np.round(basis, 12).tobytes()
    factors = op.factor_cache.get(key)
    if factors is None:
        p = np.eye(op.grid.n) - basis @ basis.T
        factors = sla.lu_factor(p @ op.dense @ p + basis @ basis.T)
        op.factor_cache[key] = factors
    return factors


def _krylov(op, target, basis, project, opts):
    grid = op.grid
    n = grid.n

    def system(x):
        return project(op.matvec(project(x))) + basis @ (basis.T @ x)

    preconditioner = 1.0 / (grid.abs_wavenumbers + 1.0)

    def precondition(x):
        return grid.ifft(preconditioner * grid.fft(x)).real

    a = LinearOperator((n, n), matvec=system, dtype=np.float64)
    m = LinearOperator((n, n), matvec=precondition, dtype=np.float64)
    x, info = minres(a, target, rtol=opts.krylov_tolerance, maxiter=20 * opts.max_iterations, M=m)
    if info < 0:
        raise ConvergenceError(f"MINRES breakdown (info={info})")
    if info > 0:
        logger.warning(f"MINRES stopped after {info} iterations without reaching rtol {opts.krylov_tolerance:.1e}")
    return x


@dataclass
class SpectrumReport:
    kind: str
    eigenvalues: np.ndarray
    fields: list
    drift: np.ndarray
    kernel_tol: float
    kernel_candidates: list = field(default_factory=list)
    negative_count: int = 0
    overlap_q: np.ndarray = None
    overlap_dq: np.ndarray = None

    @property
    def lowest_eigenvalues(self):
        return list(zip(self.eigenvalues, self.fields))

    def rows(self):
        return [
            {
                "index": i,
                "eigenvalue": float(value),
                "drift_estimate": float(self.drift[i]),
                "overlap_Q": float(self.overlap_q[i]),
                "overlap_dQ": float(self.overlap_dq[i]),
            }
            for i, value in enumerate(self.eigenvalues)
        ]


def _lowest(op, k):
    values, vectors = sla.eigh(op.dense, subset_by_index=[0, k - 1])
    return values, vectors / math.sqrt(op.grid.spacing)


def spectrum_report(op, k=8):
    """k lowest eigenpairs with drift measured against the n/2 grid (Q subsampled)."""
    if not 1 <= k <= 20:
        raise ConfigError(f"spectrum count must lie in [1, 20], got {k}")
    grid = op.grid
    values, vectors = _lowest(op, k)
    coarse_grid = Grid(grid.n // 2, grid.box_length)
    coarse = LinearizedOperator(op.kind, ComplexField(coarse_grid, op.q.values[::2]))
    coarse_values, _ = _lowest(coarse, k)
    drift = np.abs(values - coarse_values)
    kernel_tol = min(max(50.0 * float(drift.max()), 1e-6), 1e-2)
    q = op.q.real
    dq = grad(grid, q)
    fields = [vectors[:, i] for i in range(k)]
    overlap_q = np.array([abs(real_inner(grid, f, q)) / l2_norm(grid, q) for f in fields])
    overlap_dq = np.array([abs(real_inner(grid, f, dq)) / l2_norm(grid, dq) for f in fields])
    kernel = [fields[i] for i in range(k) if abs(values[i]) < kernel_tol]
    negative = int(np.sum(values < -kernel_tol))
    logger.info(
        f"L{'+' if op.kind == 'plus' else '-'} spectrum on {grid.describe()}: lowest {values[0]:.6f}, "
        f"{negative} negative, {len(kernel)} kernel (tol {kernel_tol:.1e})"
    )
    return SpectrumReport(op.kind, values, fields, drift, kernel_tol, kernel, negative, overlap_q, overlap_dq)


def half_norm_matrix(grid):
    """Dense (1 + xi^2)^{1/2} multiplier; the Gram matrix of the H^{1/2} norm up to dx."""
    column = grid.ifft(np.sqrt(1.0 + grid.wavenumbers ** 2)).real
    return sla.circulant(column)


def constrained_minimum(a, b, ortho=()):
    """Lowest generalized Rayleigh quotient x^T a x / x^T b x over x orthogonal to ``ortho``."""
    if len(ortho):
        basis = sla.null_space(np.column_stack([np.real(np.asarray(f)) for f in ortho]).T)
        a = basis.T @ a @ basis
        b = basis.T @ b @ basis
    values = sla.eigh(a, b, subset_by_index=[0, 0], eigvals_only=True)
    return float(values[0])


def _block_minimum(op, ortho):
    return constrained_minimum(op.dense, half_norm_matrix(op.grid), ortho)


@dataclass(frozen=True)
class CoercivityResult:
    constant: float
    plus_block: float
    minus_block: float

    @property
    def positive(self):
        return self.constant > 0.0


def coercivity_constant(plus_op, minus_op, plus_ortho=(), minus_ortho=()):
    """Lowest Rayleigh quotient of (L+ e1, e1) + (L- e2, e2) over ||e||_{H^1/2} = 1 with constraints."""
    plus_block = _block_minimum(plus_op, list(plus_ortho))
    minus_block = _block_minimum(minus_op, list(minus_ortho))
    result = CoercivityResult(min(plus_block, minus_block), plus_block, minus_block)
    if not result.positive:
        logger.warning(
            f"Coercivity constant {result.constant:.3e} is not positive "
            f"(plus block {plus_block:.3e}, minus block {minus_block:.3e}); check constraints or resolution"
        )
    return result


def dilation_defect(ground):
    """||L+ Lambda Q + Q|| / ||Q||."""
    grid = ground.grid
    q = ground.values
    plus = make_operator("plus", ground)
    return l2_norm(grid, plus.matvec(lambda_op(grid, q)) + q) / l2_norm(grid, q)


def kernel_defects(ground):
    """(||L- Q|| / ||Q||_{H^1}, ||L+ Q'|| / ||Q'||)."""
    grid = ground.grid
    q = ground.values
    minus = make_operator("minus", ground)
    plus = make_operator("plus", ground)
    dq = grad(grid, q)
    return (
        l2_norm(grid, minus.matvec(q)) / sobolev_norm(ground.q, 1.0),
        l2_norm(grid, plus.matvec(dq)) / l2_norm(grid, dq),
    )


def pointwise_identity_defect(ground):
    """max |-(x Q') Q + Q Lambda Q - Q^2 / 2| / ||Q||_inf^2."""
    grid = ground.grid
    q = ground.values
    defect = -(grid.nodes * grad(grid, q)) * q + q * lambda_op(grid, q) - 0.5 * q * q
    return float(np.max(np.abs(defect)) / np.max(np.abs(q)) ** 2)


def commutator_identity_defect(ground, s1):
    """|(L- S, Lambda S) - (S, D S)/2 - (S, (x Q') Q S)| relative to (S, D S)."""
    grid = ground.grid
    q = ground.values
    minus = make_operator("minus", ground)
    ds = dpow(grid, s1, 1.0)
    lhs = real_inner(grid, minus.matvec(s1), lambda_op(grid, s1))
    rhs = 0.5 * real_inner(grid, s1, ds) + real_inner(grid, s1, grid.nodes * grad(grid, q) * q * s1)
    return abs(lhs - rhs) / abs(real_inner(grid, s1, ds))
