import copy
import logging
import math
import os
import shutil

import yaml

from src.errors import ConfigError

logger = logging.getLogger(__name__)

CONFIG_PATH = "halfwave.conf"

SCENARIOS = (
    "ground_state",
    "mass_curve",
    "spectrum",
    "profiles",
    "residual_sweep",
    "blowup_run",
    "soliton_check",
)


def deep_merge(target, source):
    """Recursively merge source into target."""
    for key, value in source.items():
        if isinstance(value, dict) and key in target and isinstance(target[key], dict):
            deep_merge(target[key], value)
        else:
            target[key] = value


def get_default_config():
    return {
        "scenario": "ground_state",
        "seed": 0,
        "out": "results",
        "threads": 1,
        "grid": {
            "n": 4096,
            "box_length": 256.0,
        },
        "solver": {
            "tolerance": 1e-10,
            "max_iterations": 500,
            "solvability_tolerance": 1e-4,
            "krylov_tolerance": 1e-12,
            "dense_limit": 4096,
        },
        "mass_curve": {
            "v_max": 0.9,
            "steps": 10,
        },
        "spectrum": {
            "operator": "plus",
            "count": 8,
        },
        "residual_sweep": {
            "axis": "b",
            "values": [0.02, 0.04, 0.08, 0.16],
        },
        "blowup": {
            "energy": 1.0,
            "momentum": 0.0,
            "phase": 0.0,
            "shift": 0.0,
            "t_initial": -0.3,
            "t_final": -0.1,
        },
        "evolution": {
            "dt": 1e-3,
            "t_final": 1.0,
            "cfl_safety": 0.1,
            "snapshot_stride": 10,
            "regrid_floor": 8.0,
            "regrid_target": 16.0,
            "norm_ceiling": 1e3,
            "dt_min": 1e-9,
        },
        "virial": {
            "radius": 10.0,
            "quadrature_nodes": 64,
            "quadrature_tolerance": 1e-8,
        },
        "ledger": {
            "url": "",
        },
    }


def _lookup(defaults, dotted):
    node = defaults
    parts = dotted.split(".")
    for part in parts[:-1]:
        node = node.get(part)
        if not isinstance(node, dict):
            return None, None
    if parts[-1] not in node or isinstance(node[parts[-1]], dict):
        return None, None
    return node, parts[-1]


def _coerce(default, raw, key, line_no):
    where = f"line {line_no}: {key}"
    try:
        if isinstance(default, bool):
            value = yaml.safe_load(raw)
            if not isinstance(value, bool):
                raise ValueError(f"expected true or false, got {raw!r}")
            return value
        if isinstance(default, int):
            value = float(raw)
            if not value.is_integer():
                raise ValueError(f"expected an integer, got {raw!r}")
            return int(value)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            value = yaml.safe_load(raw)
            if not isinstance(value, list):
                raise ValueError(f"expected a list, got {raw!r}")
            # PyYAML reads 1e-10 (no dot) as a string
            return [float(item) for item in value]
        return raw.strip().strip("'\"")
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from e


def parse_config(text):
    """Flat ``section.key = value`` text overlaid on the defaults."""
    cfg = get_default_config()
    seen = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {line.strip()!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        node, leaf = _lookup(cfg, key)
        if node is None:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {line_no}: {key!r} already set on line {seen[key]}")
        seen[key] = line_no
        node[leaf] = _coerce(node[leaf], raw, key, line_no)
    return cfg


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    if isinstance(value, list):
        return "[" + ", ".join(_format(item) for item in value) + "]"
    return str(value)


def _flatten(cfg, prefix=""):
    for key, value in cfg.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            yield from _flatten(value, f"{name}.")
        else:
            yield name, value


def serialize_config(cfg):
    return "".join(f"{key} = {_format(value)}\n" for key, value in _flatten(cfg))


def _is_power_of_two(n):
    return n > 0 and n & (n - 1) == 0


def validate_config(cfg):
    """Range checks; each failure names the offending key."""

    def fail(key, message):
        raise ConfigError(f"{key}: {message}")

    if cfg["scenario"] not in SCENARIOS:
        fail("scenario", f"must be one of {', '.join(SCENARIOS)}, got {cfg['scenario']!r}")
    grid = cfg["grid"]
    if not _is_power_of_two(grid["n"]) or not 16 <= grid["n"] <= 2 ** 24:
        fail("grid.n", f"must be a power of two in [16, 2^24], got {grid['n']}")
    if not 1.0 <= grid["box_length"] <= 1e6:
        fail("grid.box_length", f"must lie in [1, 1e6], got {grid['box_length']}")
    for key in ("tolerance", "solvability_tolerance", "krylov_tolerance"):
        value = cfg["solver"][key]
        if not 0.0 < value < 1.0:
            fail(f"solver.{key}", f"must lie in (0, 1), got {value}")
    if cfg["solver"]["max_iterations"] < 1:
        fail("solver.max_iterations", "must be positive")
    if cfg["threads"] < 1:
        fail("threads", "must be positive")
    if not 0.0 <= cfg["mass_curve"]["v_max"] < 0.95:
        fail("mass_curve.v_max", f"must lie in [0, 0.95), got {cfg['mass_curve']['v_max']}")
    if cfg["mass_curve"]["steps"] < 1:
        fail("mass_curve.steps", "must be positive")
    if cfg["spectrum"]["operator"] not in ("plus", "minus"):
        fail("spectrum.operator", f"must be 'plus' or 'minus', got {cfg['spectrum']['operator']!r}")
    if not 1 <= cfg["spectrum"]["count"] <= 20:
        fail("spectrum.count", f"must lie in [1, 20], got {cfg['spectrum']['count']}")
    if cfg["residual_sweep"]["axis"] not in ("b", "v"):
        fail("residual_sweep.axis", f"must be 'b' or 'v', got {cfg['residual_sweep']['axis']!r}")
    values = cfg["residual_sweep"]["values"]
    if not values or any(not 0.0 < abs(x) <= 0.5 for x in values):
        fail("residual_sweep.values", "must be non-empty with 0 < |value| <= 0.5")
    blowup = cfg["blowup"]
    if not blowup["energy"] > 0.0:
        fail("blowup.energy", f"must be positive, got {blowup['energy']}")
    if not blowup["t_initial"] < blowup["t_final"] < 0.0:
        fail("blowup.t_initial", f"need t_initial < t_final < 0, got {blowup['t_initial']} and {blowup['t_final']}")
    evolution = cfg["evolution"]
    for key in ("dt", "cfl_safety", "norm_ceiling", "dt_min", "regrid_floor", "regrid_target"):
        if not evolution[key] > 0.0:
            fail(f"evolution.{key}", f"must be positive, got {evolution[key]}")
    if evolution["cfl_safety"] > 1.0:
        fail("evolution.cfl_safety", "must not exceed 1")
    if evolution["regrid_floor"] >= evolution["regrid_target"]:
        fail("evolution.regrid_floor", "must be smaller than evolution.regrid_target")
    if evolution["snapshot_stride"] < 1:
        fail("evolution.snapshot_stride", "must be positive")
    virial = cfg["virial"]
    if not virial["radius"] >= 1.0:
        fail("virial.radius", f"must be at least 1, got {virial['radius']}")
    if not 0.0 < virial["quadrature_tolerance"] < 1.0:
        fail("virial.quadrature_tolerance", "must lie in (0, 1)")
    if virial["quadrature_nodes"] < 2:
        fail("virial.quadrature_nodes", "must be at least 2")
    for key, value in _flatten(cfg):
        if isinstance(value, float) and not math.isfinite(value):
            fail(key, "must be finite")
    return cfg


def _read(path):
    with open(path, "r") as f:
        return f.read()


def load_config(path=CONFIG_PATH):
    """Parse and validate ``path``; a missing or empty file falls back to its .bak copy, then to defaults."""
    backup_path = path + ".bak"
    text = _read(path) if os.path.exists(path) else ""
    if not text.strip():
        if os.path.exists(backup_path):
            logger.warning(f"Config at {path} is missing or empty; using backup {backup_path}")
            text = _read(backup_path)
        else:
            logger.warning(f"Config file not found at {path}. Using defaults.")
            return validate_config(get_default_config())
    cfg = validate_config(parse_config(text))
    logger.info(f"Loaded config from {path}: scenario {cfg['scenario']}")
    return cfg


def merged(cfg, updates):
    out = copy.deepcopy(cfg)
    deep_merge(out, updates)
    return out


def save_config(cfg, path=CONFIG_PATH):
    """Atomic write: temp file, fsync, backup of the previous file, rename."""
    text = serialize_config(cfg)
    temp_path = path + ".tmp"
    backup_path = path + ".bak"
    with open(temp_path, "w") as f:
        f.write(text)
        f.flush()
        os.fsync(f.fileno())
    if os.path.exists(path):
        try:
            shutil.copy2(path, backup_path)
        except OSError as e:
            logger.warning(f"Failed to create backup copy: {e}")
    os.replace(temp_path, path)
    logger.info(f"Configuration saved to {path}")
    return path
