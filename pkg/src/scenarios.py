"""Scenario orchestration: one call runs one scenario into an output directory.

Every run ends with a manifest listing the produced files and a row in the run ledger.
"""
import json
import logging
import math
import os
import shutil
import time

import numpy as np
from scipy.optimize import minimize_scalar

from src import storage
from src.config import save_config, validate_config
from src.database import RunLog, SessionLocal, init_db
from src.errors import ConfigError, HalfwaveError
from src.evolution import EvolutionConfig, Frame, evolve
from src.ground_states import SolverOpts, mass_curve as solve_mass_curve, solve_boosted, solve_ground_state
from src.linearized import (
    coercivity_constant,
    dilation_defect,
    kernel_defects,
    make_operator,
    spectrum_report,
)
from src.modulation import (
    blowup_constants,
    modulation_law_ratios,
    orthogonality_jacobian,
    prescribed_state,
    reference_jacobian,
    track,
)
from src.profiles import (
    build_profiles,
    expansion_orders,
    fitted_order,
    mass_second_derivative,
    residual_sweep as sweep_residuals,
)
from src.spectral import ComplexField, SQuadrature, conserved_values, l2_norm, make_grid, set_workers, translate
from src.virial import VirialConfig, virial_series

logger = logging.getLogger(__name__)

LEDGER_NAME = "runs.db"
TRAVELING_VELOCITY = 0.3
BUILTIN_FIELDS = ("ground", "subcritical")
SUBCRITICAL_FACTOR = 0.9


def grid_from(cfg):
    return make_grid(cfg["grid"]["n"], cfg["grid"]["box_length"])


def solver_opts(cfg):
    return SolverOpts(**cfg["solver"])


def evolution_config(cfg, t_begin, t_end, dt=None, regrid=False):
    evolution = cfg["evolution"]
    return EvolutionConfig(
        dt=evolution["dt"] if dt is None else dt,
        t_begin=t_begin,
        t_end=t_end,
        cfl_safety=evolution["cfl_safety"],
        snapshot_stride=evolution["snapshot_stride"],
        regrid=regrid,
        regrid_floor=evolution["regrid_floor"],
        regrid_target=evolution["regrid_target"],
        norm_ceiling=evolution["norm_ceiling"],
        dt_min=evolution["dt_min"],
    )


def virial_config(cfg, radius=None):
    virial = cfg["virial"]
    quadrature = SQuadrature(nodes=virial["quadrature_nodes"], tolerance=virial["quadrature_tolerance"])
    return VirialConfig(radius=virial["radius"] if radius is None else radius, quadrature=quadrature)


def _ground(cfg):
    return solve_ground_state(grid_from(cfg), solver_opts(cfg))


def _profiles(cfg):
    opts = solver_opts(cfg)
    ground = solve_ground_state(grid_from(cfg), opts)
    return build_profiles(ground, opts)


def _finite(value):
    value = float(value)
    return value if math.isfinite(value) else None


# --- scenarios ---------------------------------------------------------------

def ground_state(cfg, out_dir):
    ground = _ground(cfg)
    storage.save_snapshot(os.path.join(out_dir, "ground_state.hwf"), ground.q)
    minus_defect, plus_defect = kernel_defects(ground)
    results = {
        "mass": ground.mass,
        "residual": ground.residual_norm,
        "iterations": ground.iterations,
        "tail_exponent": _finite(ground.tail_exponent),
        "energy": conserved_values(ground.grid, ground.q.values).energy,
        "minus_kernel_defect": minus_defect,
        "plus_kernel_defect": plus_defect,
        "dilation_defect": dilation_defect(ground),
    }
    return results, []


def mass_curve(cfg, out_dir):
    grid = grid_from(cfg)
    velocities = np.linspace(0.0, cfg["mass_curve"]["v_max"], cfg["mass_curve"]["steps"])
    rows = solve_mass_curve(grid, velocities, solver_opts(cfg))
    storage.emit_csv([row.__dict__ for row in rows], "mass_curve", os.path.join(out_dir, "mass_curve.csv"))
    reference = rows[0].mass if rows[0].status == "ok" and rows[0].v == 0.0 else math.nan
    failed = [row.v for row in rows if row.status != "ok"]
    # mass(Q_v) >= (1 - v) mass(Q) with 1% slack
    lower_bound = all(row.mass >= (1.0 - row.v) * reference * 0.99 for row in rows if row.status == "ok")
    results = {
        "masses": {f"{row.v:g}": _finite(row.mass) for row in rows},
        "strictly_decreasing": all(row.decreasing for row in rows),
        "lower_bound_holds": bool(lower_bound),
        "failed_velocities": failed,
    }
    return results, ["mass_curve"]


def spectrum(cfg, out_dir):
    ground = _ground(cfg)
    op = make_operator(cfg["spectrum"]["operator"], ground)
    report = spectrum_report(op, cfg["spectrum"]["count"])
    storage.emit_csv(report.rows(), "spectrum", os.path.join(out_dir, "spectrum.csv"))
    results = {
        "operator": report.kind,
        "negative_count": report.negative_count,
        "kernel_dimension": len(report.kernel_candidates),
        "kernel_tolerance": report.kernel_tol,
        "lowest_eigenvalue": float(report.eigenvalues[0]),
    }
    return results, ["spectrum"]


def profiles(cfg, out_dir):
    opts = solver_opts(cfg)
    ps = _profiles(cfg)
    storage.save_profiles(os.path.join(out_dir, "profiles"), ps)
    results = {
        "e1": ps.e1,
        "p1": ps.p1,
        "mass_second_derivative": mass_second_derivative(ps),
        "identities": ps.identities,
        "parity_defects": ps.parity_defects,
        "tails": {name: _finite(value) for name, value in ps.tails.items()},
    }
    values = cfg["residual_sweep"]["values"]
    for axis in ("b", "v"):
        orders = expansion_orders(ps, axis, values)
        results[f"expansion_{axis}"] = {
            "energy_order": _finite(orders.energy_order),
            "momentum_order": _finite(orders.momentum_order),
            "mass_order": _finite(orders.mass_order),
            "passed": orders.passed,
        }
        rows = sweep_residuals(ps, axis, values)
        results[f"residual_slope_{axis}"] = fitted_order(values, [row.l2 for row in rows])
        results[f"resolved_slope_{axis}"] = fitted_order(values, [row.resolved for row in rows])
    x0 = np.array([1.0, 0.0, 0.0, 0.0, 0.0])
    numeric = orthogonality_jacobian(ComplexField(ps.grid, ps.q), ps, x0)
    reference = reference_jacobian(ps)
    results["jacobian_deviation"] = float(np.max(np.abs(numeric - reference)) / np.max(np.abs(reference)))
    if ps.grid.n <= opts.dense_limit:
        coercivity = coercivity_constant(
            make_operator("plus", ps.ground),
            make_operator("minus", ps.ground),
            plus_ortho=[ps.q, ps.s1, ps.g1],
            minus_ortho=[ps.rho1],
        )
        results["coercivity"] = {
            "constant": coercivity.constant,
            "plus_block": coercivity.plus_block,
            "minus_block": coercivity.minus_block,
        }
    else:
        logger.warning(f"Skipping the coercivity check: n={ps.grid.n} exceeds solver.dense_limit")
    return results, []


def residual_sweep(cfg, out_dir):
    ps = _profiles(cfg)
    axis = cfg["residual_sweep"]["axis"]
    values = cfg["residual_sweep"]["values"]
    rows = sweep_residuals(ps, axis, values)
    storage.emit_csv(
        [
            {"b": row.b, "v": row.v, "psi_L2": row.l2, "psi_H1": row.h1, "psi_resolved_L2": row.resolved}
            for row in rows
        ],
        "residual_sweep",
        os.path.join(out_dir, "residual_sweep.csv"),
    )
    results = {
        "axis": axis,
        "slope_L2": fitted_order(values, [row.l2 for row in rows]),
        "slope_H1": fitted_order(values, [row.h1 for row in rows]),
        "slope_resolved": fitted_order(values, [row.resolved for row in rows]),
    }
    return results, ["residual_sweep"]


def _max_deviation(values):
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    return float(np.max(np.abs(values - 1.0))) if values.size else None


def _median(values):
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    return float(np.median(values)) if values.size else None


def blowup_run(cfg, out_dir):
    """Minimal-mass data at t_initial, evolved towards t_final in a zooming frame and tracked."""
    blowup = cfg["blowup"]
    ps = _profiles(cfg)
    storage.save_profiles(os.path.join(out_dir, "profiles"), ps)
    energy, momentum = blowup["energy"], blowup["momentum"]
    c0, d0 = blowup_constants(ps, energy, momentum)
    state = prescribed_state(ps, blowup["t_initial"], energy, momentum, blowup["phase"], blowup["shift"])
    params = state.params
    w0 = ComplexField(ps.grid, (ps.sigma(params) + 1j * ps.theta(params)) * np.exp(1j * state.gamma))
    frame = Frame(state.lam, state.alpha)
    ecfg = evolution_config(cfg, blowup["t_initial"], blowup["t_final"], regrid=True)
    trajectory = evolve(w0, ecfg, frame=frame)
    storage.save_trajectory(out_dir, trajectory)

    result = track(trajectory, ps, guess=state)
    storage.emit_csv(result.rows(), "track", os.path.join(out_dir, "track.csv"))
    results = {
        "C0": c0,
        "D0": d0,
        "steps": trajectory.steps,
        "halted": trajectory.halted,
        "regrids": sum(1 for event in trajectory.events if event.kind == "regrid"),
        "tracked": len(result.states),
        "tracking_failure": result.failure,
        "drift": trajectory.drift(),
    }
    schemas = ["conserved", "snapshots", "track"]
    if len(result.states) >= 3:
        times = np.array(result.times)
        lam = result.series("lam")
        b = result.series("b")
        v = result.series("v")
        window = np.abs(times) <= 10.0 * np.abs(times[-1])
        results["lambda_shrink"] = float(lam[0] / lam[-1])
        results["lambda_law_deviation"] = _max_deviation((lam * 4.0 * c0 * c0 / times ** 2)[window])
        results["b_law_deviation"] = _max_deviation((b * c0 / np.sqrt(lam))[window])
        b_ratio, v_ratio = modulation_law_ratios(result)
        results["b_s_over_b2"] = _median(b_ratio)
        results["v_s_over_bv"] = _median(v_ratio) if momentum != 0.0 else None
        results["v_over_lambda"] = {"final": float(v[-1] / lam[-1]), "spread": float(np.ptp(v / lam))}
        results["max_mod_ratio"] = _finite(max(mod.ratio for mod in result.mod))

        series = virial_series(result, trajectory, ps, virial_config(cfg))
        storage.emit_csv([{"t": t, "virial": value} for t, value in series], "virial", os.path.join(out_dir, "virial.csv"))
        schemas.append("virial")
    abs_times = np.array([abs(snapshot.time) for snapshot in trajectory.snapshots])
    norms = np.array([
        snapshot.frame.half_derivative_norm(snapshot.field.grid, snapshot.field.values) for snapshot in trajectory.snapshots
    ])
    if len(abs_times) >= 2:
        results["half_derivative_slope"] = fitted_order(abs_times, norms)
    _, final = trajectory.conserved_series[-1]
    results["momentum"] = {"final": final.momentum, "expected": 2.0 * c0 * momentum}
    return results, schemas


def _shift_fit(grid, target, values, guess):
    """min over shift and phase of ||values - e^{i theta} target(x - shift)|| relative to ||target||."""
    scale = l2_norm(grid, target)

    def defect(shift):
        moved = translate(grid, target, shift)
        overlap = np.vdot(moved, values)
        phase = overlap / abs(overlap) if abs(overlap) > 0.0 else 1.0
        return l2_norm(grid, values - phase * moved) / scale

    fit = minimize_scalar(defect, bracket=(guess - grid.spacing, guess + grid.spacing), tol=1e-10)
    return float(fit.x), float(fit.fun)


def soliton_check(cfg, out_dir):
    """e^{it} Q and the v = 0.3 traveling wave evolved to t = t_final against their exact motion."""
    opts = solver_opts(cfg)
    grid = grid_from(cfg)
    t_final = cfg["evolution"]["t_final"]
    ecfg = evolution_config(cfg, 0.0, t_final)
    ground = solve_ground_state(grid, opts)
    trajectory = evolve(ground.q, ecfg)
    storage.save_trajectory(out_dir, trajectory)
    exact = ground.q.values * np.exp(1j * t_final)
    soliton_drift = l2_norm(grid, trajectory.final.field.values - exact) / l2_norm(grid, ground.q.values)

    boosted = solve_boosted(grid, TRAVELING_VELOCITY, opts)
    moving = evolve(boosted.qv, ecfg)
    shift, traveling_drift = _shift_fit(grid, boosted.qv.values, moving.final.field.values, TRAVELING_VELOCITY * t_final)
    results = {
        "soliton_drift": soliton_drift,
        "soliton_conservation": trajectory.drift(),
        "traveling_velocity": TRAVELING_VELOCITY,
        "traveling_shift": shift,
        "traveling_drift": traveling_drift,
        "traveling_conservation": moving.drift(),
    }
    logger.info(f"Soliton drift {soliton_drift:.3e}, traveling-wave drift {traveling_drift:.3e}")
    return results, ["conserved", "snapshots"]


SCENARIO_RUNNERS = {
    "ground_state": ground_state,
    "mass_curve": mass_curve,
    "spectrum": spectrum,
    "profiles": profiles,
    "residual_sweep": residual_sweep,
    "blowup_run": blowup_run,
    "soliton_check": soliton_check,
}


# --- tools on stored data ----------------------------------------------------

def builtin_field(cfg, name):
    if name not in BUILTIN_FIELDS:
        raise ConfigError(f"unknown builtin field {name!r}; choose one of {', '.join(BUILTIN_FIELDS)}")
    ground = _ground(cfg)
    return ground.q if name == "ground" else ground.q * SUBCRITICAL_FACTOR


def evolve_field(cfg, out_dir, init, t0=0.0, t1=None, dt=None, regrid=False):
    """Evolve a builtin field or a stored snapshot and store the trajectory."""
    if init in BUILTIN_FIELDS:
        u0 = builtin_field(cfg, init)
    else:
        u0, _ = storage.load_snapshot(init)
    t1 = cfg["evolution"]["t_final"] if t1 is None else t1
    trajectory = evolve(u0, evolution_config(cfg, t0, t1, dt, regrid))
    storage.save_trajectory(out_dir, trajectory)
    results = {
        "steps": trajectory.steps,
        "halted": trajectory.halted,
        "events": [{"t": event.time, "kind": event.kind, **event.detail} for event in trajectory.events],
        "drift": trajectory.drift(),
    }
    return results, ["conserved", "snapshots"]


def track_directory(cfg, out_dir, traj_dir, profiles_dir):
    trajectory = storage.load_trajectory(traj_dir)
    ps = storage.load_profiles(profiles_dir)
    result = track(trajectory, ps)
    storage.emit_csv(result.rows(), "track", os.path.join(out_dir, "track.csv"))
    return {"tracked": len(result.states), "snapshots": len(trajectory.snapshots), "failure": result.failure}, ["track"]


def virial_directory(cfg, out_dir, traj_dir, profiles_dir, radius=None):
    trajectory = storage.load_trajectory(traj_dir)
    ps = storage.load_profiles(profiles_dir)
    result = track(trajectory, ps)
    series = virial_series(result, trajectory, ps, virial_config(cfg, radius))
    storage.emit_csv([{"t": t, "virial": value} for t, value in series], "virial", os.path.join(out_dir, "virial.csv"))
    return {"points": len(series), "tracking_failure": result.failure}, ["virial"]


# --- run ledger --------------------------------------------------------------

def _record(label, status, exit_code, summary, details, out_dir):
    db = SessionLocal()
    try:
        log = RunLog(
            scenario=label,
            status=status,
            exit_code=exit_code,
            summary=summary,
            details=json.dumps(details, default=str),
            out_dir=out_dir,
        )
        db.add(log)
        db.commit()
    except Exception as e:
        logger.error(f"Failed to record run in ledger: {e}")
    finally:
        db.close()


def execute(cfg, label, runner, *args, **kwargs):
    """Run ``runner(cfg, out_dir, ...)`` with the ledger and manifest around it; returns the manifest path."""
    validate_config(cfg)
    started = time.time()
    set_workers(cfg["threads"])
    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)
    init_db(cfg["ledger"]["url"] or f"sqlite:///{os.path.join(out_dir, LEDGER_NAME)}")
    logger.info(f"Running {label} into {out_dir}")
    try:
        results, schemas = runner(cfg, out_dir, *args, **kwargs)
    except HalfwaveError as e:
        _record(label, "failed", e.exit_code, f"{type(e).__name__}: {e}", {}, out_dir)
        raise
    save_config(cfg, os.path.join(out_dir, "halfwave.conf"))
    manifest = storage.write_manifest(out_dir, cfg, schemas, results, started)
    _record(label, "success", 0, f"{label} finished in {time.time() - started:.1f}s", results, out_dir)
    return manifest


def run(cfg):
    """Execute the configured scenario end to end."""
    validate_config(cfg)
    return execute(cfg, cfg["scenario"], SCENARIO_RUNNERS[cfg["scenario"]])


def copy_output(out_dir, name, destination):
    """Copy one produced file to an explicit path requested on the command line."""
    if destination:
        shutil.copyfile(os.path.join(out_dir, name), destination)
        logger.info(f"Copied {name} to {destination}")
