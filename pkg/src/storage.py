"""Field snapshots, CSV tables and the output-directory manifest.

Snapshot layout (HWF1): the 4-byte magic, u64 n, f64 box length and f64 time,
all little-endian, followed by n interleaved (re, im) f64 pairs.
"""
import csv
import hashlib
import json
import logging
import os
import platform
import time
from datetime import datetime

import numpy as np
import scipy
import sqlalchemy
import yaml

from src.errors import ConfigError, NumericalCorruptionError
from src.evolution import Frame, Snapshot, Trajectory
from src.ground_states import GroundState
from src.profiles import ProfileSet, parity_defect, PARITY
from src.spectral import ComplexField, ConservedTriple, Grid, conserved_values

logger = logging.getLogger(__name__)

MAGIC = b"HWF1"
HEADER = np.dtype([("n", "<u8"), ("box_length", "<f8"), ("time", "<f8")])
MANIFEST_NAME = "manifest.json"
PACKAGE_VERSION = "0.1.0"

# scenario tables: name -> (version, columns)
CSV_SCHEMAS = {
    "mass_curve": (1, ["v", "mass", "cv", "residual", "pohozaev_defect", "iterations"]),
    "spectrum": (1, ["index", "eigenvalue", "drift_estimate", "overlap_Q", "overlap_dQ"]),
    "residual_sweep": (2, ["b", "v", "psi_L2", "psi_H1", "psi_resolved_L2"]),
    "conserved": (1, ["t", "mass", "energy", "momentum"]),
    "track": (
        1,
        ["t", "s", "lambda", "alpha", "gamma", "b", "v", "eps_L2", "eps_H12",
         "mod1", "mod2", "mod3", "mod4", "mod5", "mod_error"],
    ),
    "virial": (1, ["t", "virial"]),
    "snapshots": (1, ["file", "t", "frame_scale", "frame_shift"]),
}


def save_snapshot(path, field_, t=0.0):
    header = np.zeros(1, dtype=HEADER)
    header["n"] = field_.grid.n
    header["box_length"] = field_.grid.box_length
    header["time"] = t
    payload = np.ascontiguousarray(field_.values, dtype="<c16")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(header.tobytes())
        f.write(payload.tobytes())
    return path


def load_snapshot(path):
    """(field, time) from an HWF1 file."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise ConfigError(f"{path} is not an HWF1 snapshot")
    header = np.frombuffer(data, dtype=HEADER, count=1, offset=4)[0]
    n = int(header["n"])
    offset = 4 + HEADER.itemsize
    expected = offset + 16 * n
    if len(data) != expected:
        raise NumericalCorruptionError(f"{path}: expected {expected} bytes for n={n}, found {len(data)}")
    values = np.frombuffer(data, dtype="<c16", count=n, offset=offset)
    grid = Grid(n, float(header["box_length"]))
    return ComplexField(grid, values), float(header["time"])


def _cell(value):
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def emit_csv(rows, schema, path):
    """Write ``rows`` (dicts) with the fixed column order of ``schema``."""
    if schema not in CSV_SCHEMAS:
        raise ConfigError(f"unknown CSV schema {schema!r}")
    _, columns = CSV_SCHEMAS[schema]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row[column]) for column in columns])
    logger.info(f"Wrote {len(rows)} rows to {path}")
    return path


def sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _library_versions():
    return {
        "halfwave": PACKAGE_VERSION,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "PyYAML": yaml.__version__,
        "SQLAlchemy": sqlalchemy.__version__,
    }


def write_manifest(out_dir, cfg, schemas=(), results=None, started=None):
    """manifest.json listing every other file in ``out_dir`` with its SHA-256."""
    files = {}
    for root, _, names in os.walk(out_dir):
        for name in sorted(names):
            path = os.path.join(root, name)
            rel = os.path.relpath(path, out_dir)
            if rel == MANIFEST_NAME or rel.endswith((".db", ".db-journal")):
                continue
            files[rel] = sha256(path)
    manifest = {
        "created": datetime.now().isoformat(timespec="seconds"),
        "wall_clock_seconds": None if started is None else time.time() - started,
        "seed": cfg.get("seed"),
        "config": cfg,
        "versions": _library_versions(),
        "schemas": {name: CSV_SCHEMAS[name][0] for name in schemas},
        "results": results or {},
        "files": dict(sorted(files.items())),
    }
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=_json_default)
    logger.info(f"Manifest lists {len(files)} files in {out_dir}")
    return path


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return str(value)


def verify_manifest(out_dir):
    """Names of files whose checksum no longer matches, plus files missing from the listing."""
    with open(os.path.join(out_dir, MANIFEST_NAME)) as f:
        manifest = json.load(f)
    problems = []
    for rel, digest in manifest["files"].items():
        path = os.path.join(out_dir, rel)
        if not os.path.exists(path):
            problems.append(f"missing: {rel}")
        elif sha256(path) != digest:
            problems.append(f"checksum mismatch: {rel}")
    for root, _, names in os.walk(out_dir):
        for name in names:
            rel = os.path.relpath(os.path.join(root, name), out_dir)
            if rel != MANIFEST_NAME and not rel.endswith((".db", ".db-journal")) and rel not in manifest["files"]:
                problems.append(f"unlisted: {rel}")
    return problems


def save_trajectory(out_dir, trajectory):
    """snapshots/NNNNNN.hwf plus an index table with each snapshot's frame, and the conserved series."""
    snapshot_dir = os.path.join(out_dir, "snapshots")
    os.makedirs(snapshot_dir, exist_ok=True)
    index = []
    for i, snapshot in enumerate(trajectory.snapshots):
        name = f"{i:06d}.hwf"
        save_snapshot(os.path.join(snapshot_dir, name), snapshot.field, snapshot.time)
        index.append(
            {"file": name, "t": snapshot.time, "frame_scale": snapshot.frame.scale, "frame_shift": snapshot.frame.shift}
        )
    emit_csv(index, "snapshots", os.path.join(snapshot_dir, "index.csv"))
    rows = [
        {"t": t, "mass": c.mass, "energy": c.energy, "momentum": c.momentum} for t, c in trajectory.conserved_series
    ]
    emit_csv(rows, "conserved", os.path.join(out_dir, "conserved.csv"))


def _read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def load_trajectory(out_dir):
    """Inverse of save_trajectory; events are not persisted."""
    snapshot_dir = os.path.join(out_dir, "snapshots")
    index_path = os.path.join(snapshot_dir, "index.csv")
    if not os.path.exists(index_path):
        raise ConfigError(f"{out_dir} holds no trajectory (missing {index_path})")
    trajectory = Trajectory()
    for row in _read_csv(index_path):
        field_, t = load_snapshot(os.path.join(snapshot_dir, row["file"]))
        frame = Frame(float(row["frame_scale"]), float(row["frame_shift"]))
        trajectory.snapshots.append(Snapshot(t, field_, frame))
    conserved_path = os.path.join(out_dir, "conserved.csv")
    if os.path.exists(conserved_path):
        for row in _read_csv(conserved_path):
            triple = ConservedTriple(float(row["mass"]), float(row["energy"]), float(row["momentum"]))
            trajectory.conserved_series.append((float(row["t"]), triple))
    if not trajectory.snapshots:
        raise ConfigError(f"no snapshots found under {snapshot_dir}")
    return trajectory


def save_profiles(out_dir, ps):
    """One snapshot per profile field plus profiles.json with the constants and identity residuals."""
    os.makedirs(out_dir, exist_ok=True)
    for name, values in ps.fields.items():
        save_snapshot(os.path.join(out_dir, f"{name}.hwf"), ComplexField(ps.grid, values))
    summary = {
        "e1": ps.e1,
        "p1": ps.p1,
        "ground_energy": ps.ground_energy,
        "ground_mass": ps.ground.mass,
        "ground_residual": ps.ground.residual_norm,
        "tail_exponent": ps.ground.tail_exponent,
        "identities": ps.identities,
        "parity_defects": ps.parity_defects,
        "tails": ps.tails,
    }
    path = os.path.join(out_dir, "profiles.json")
    with open(path, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True, default=_json_default)
    return path


def load_profiles(out_dir):
    summary_path = os.path.join(out_dir, "profiles.json")
    if not os.path.exists(summary_path):
        raise ConfigError(f"{out_dir} holds no profile set (missing profiles.json)")
    with open(summary_path) as f:
        summary = json.load(f)
    fields = {}
    grid = None
    for name in PARITY:
        field_, _ = load_snapshot(os.path.join(out_dir, f"{name}.hwf"))
        grid = field_.grid
        values = np.array(field_.real)
        values.setflags(write=False)
        fields[name] = values
    q = ComplexField(grid, fields["q"])
    ground = GroundState(
        q,
        residual_norm=summary["ground_residual"],
        mass=conserved_values(grid, q.values).mass,
        tail_exponent=summary["tail_exponent"],
    )
    return ProfileSet(
        ground,
        fields,
        summary["e1"],
        summary["p1"],
        summary["ground_energy"],
        summary["identities"],
        {name: parity_defect(values, PARITY[name]) for name, values in fields.items()},
        summary["tails"],
    )
