import argparse
import logging
import sys

from src import scenarios
from src.config import CONFIG_PATH, SCENARIOS, load_config, merged
from src.errors import HalfwaveError
from src.storage import PACKAGE_VERSION

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"


def build_parser():
    parser = argparse.ArgumentParser(prog="halfwave", description="Pseudospectral lab for the half-wave equation")
    parser.add_argument("--version", action="version", version=f"halfwave {PACKAGE_VERSION}")
    parser.add_argument("--config", default=CONFIG_PATH, help="flat key = value config file")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--threads", type=int, help="FFT worker threads")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    commands = parser.add_subparsers(dest="command", required=True)

    ground = commands.add_parser("ground-state", help="solve D Q + Q = Q^3")
    ground.add_argument("--n", type=int)
    ground.add_argument("--box", type=float)
    ground.add_argument("--tol", type=float)
    ground.add_argument("--snapshot", help="also copy the ground state snapshot here")

    curve = commands.add_parser("mass-curve", help="mass of the boosted ground states against v")
    curve.add_argument("--vmax", type=float)
    curve.add_argument("--steps", type=int)
    curve.add_argument("--csv")

    spec = commands.add_parser("spectrum", help="lowest eigenvalues of L+ or L-")
    spec.add_argument("--op", choices=["plus", "minus"])
    spec.add_argument("-k", type=int)
    spec.add_argument("--csv")

    prof = commands.add_parser("profiles", help="build the profile hierarchy or sweep its residual")
    prof.add_argument("--build", action="store_true", help="default when --residual-sweep is absent")
    prof.add_argument("--residual-sweep", action="store_true")
    prof.add_argument("--axis", choices=["b", "v"])
    prof.add_argument("--csv")

    evo = commands.add_parser("evolve", help="evolve a builtin field or a snapshot")
    evo.add_argument("--init", default="ground", help=f"snapshot path or one of {', '.join(scenarios.BUILTIN_FIELDS)}")
    evo.add_argument("--t0", type=float, default=0.0)
    evo.add_argument("--t1", type=float)
    evo.add_argument("--dt", type=float)
    evo.add_argument("--regrid", action="store_true")
    evo.add_argument("--csv", help="also copy the conserved series here")

    trk = commands.add_parser("track", help="modulation parameters along a stored trajectory")
    trk.add_argument("--traj", required=True)
    trk.add_argument("--profiles", required=True)
    trk.add_argument("--csv")

    vir = commands.add_parser("virial", help="localized virial functional along a stored trajectory")
    vir.add_argument("--traj", required=True)
    vir.add_argument("--profiles", required=True)
    vir.add_argument("--A", type=float, dest="radius")
    vir.add_argument("--csv")

    run = commands.add_parser("run", help="run the scenario named in the config")
    run.add_argument("--scenario", choices=SCENARIOS)
    return parser


def _compact(updates):
    """Drop unset options so they do not override the config file."""
    out = {}
    for key, value in updates.items():
        if isinstance(value, dict):
            value = _compact(value)
            if value:
                out[key] = value
        elif value is not None:
            out[key] = value
    return out


def resolve_config(args):
    cfg = load_config(args.config)
    updates = {"out": args.out, "threads": args.threads, "seed": args.seed}
    if args.command == "ground-state":
        updates.update(scenario="ground_state", grid={"n": args.n, "box_length": args.box}, solver={"tolerance": args.tol})
    elif args.command == "mass-curve":
        updates.update(scenario="mass_curve", mass_curve={"v_max": args.vmax, "steps": args.steps})
    elif args.command == "spectrum":
        updates.update(scenario="spectrum", spectrum={"operator": args.op, "count": args.k})
    elif args.command == "profiles":
        scenario = "residual_sweep" if args.residual_sweep else "profiles"
        updates.update(scenario=scenario, residual_sweep={"axis": args.axis})
    elif args.command == "run":
        updates["scenario"] = args.scenario
    return merged(cfg, _compact(updates))


def dispatch(args, cfg):
    command = args.command
    out_dir = cfg["out"]
    if command == "evolve":
        manifest = scenarios.execute(cfg, "evolve", scenarios.evolve_field, args.init, args.t0, args.t1, args.dt, args.regrid)
        scenarios.copy_output(out_dir, "conserved.csv", args.csv)
    elif command == "track":
        manifest = scenarios.execute(cfg, "track", scenarios.track_directory, args.traj, args.profiles)
        scenarios.copy_output(out_dir, "track.csv", args.csv)
    elif command == "virial":
        manifest = scenarios.execute(cfg, "virial", scenarios.virial_directory, args.traj, args.profiles, args.radius)
        scenarios.copy_output(out_dir, "virial.csv", args.csv)
    else:
        manifest = scenarios.run(cfg)
        produced = {
            "ground_state": "ground_state.hwf",
            "mass_curve": "mass_curve.csv",
            "spectrum": "spectrum.csv",
            "residual_sweep": "residual_sweep.csv",
        }.get(cfg["scenario"])
        destination = getattr(args, "snapshot", None) or getattr(args, "csv", None)
        if produced:
            scenarios.copy_output(out_dir, produced, destination)
    return manifest


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)
    try:
        cfg = resolve_config(args)
        manifest = dispatch(args, cfg)
    except HalfwaveError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    logger.info(f"Manifest written to {manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
