import json

import numpy as np
import pytest

from src.errors import ConfigError, NumericalCorruptionError
from src.evolution import Frame, Snapshot, Trajectory
from src.spectral import ComplexField, ConservedTriple, Grid
from src.storage import (
    MANIFEST_NAME,
    emit_csv,
    load_profiles,
    load_snapshot,
    load_trajectory,
    save_profiles,
    save_snapshot,
    save_trajectory,
    verify_manifest,
    write_manifest,
)


def random_field(rng, n=64, box=12.5):
    return ComplexField(Grid(n, box), rng.normal(size=n) + 1j * rng.normal(size=n))


def test_snapshot_is_bit_exact(tmp_path, rng):
    field = random_field(rng)
    path = save_snapshot(str(tmp_path / "u.hwf"), field, t=-0.125)
    loaded, t = load_snapshot(path)
    assert t == -0.125
    assert loaded.grid == field.grid
    assert np.array_equal(loaded.values, field.values)
    assert (tmp_path / "u.hwf").stat().st_size == 4 + 24 + 16 * 64


def test_snapshot_with_wrong_magic(tmp_path, rng):
    path = tmp_path / "u.hwf"
    save_snapshot(str(path), random_field(rng))
    data = path.read_bytes()
    path.write_bytes(b"HWF0" + data[4:])
    with pytest.raises(ConfigError):
        load_snapshot(str(path))


def test_truncated_snapshot(tmp_path, rng):
    path = tmp_path / "u.hwf"
    save_snapshot(str(path), random_field(rng))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(NumericalCorruptionError):
        load_snapshot(str(path))


def test_csv_uses_schema_order_and_full_precision(tmp_path):
    path = tmp_path / "curve.csv"
    rows = [
        {"iterations": 12, "v": 0.1, "mass": 6.0, "cv": 1.0, "residual": 1e-11, "pohozaev_defect": -0.0, "extra": "x"}
    ]
    emit_csv(rows, "mass_curve", str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "v,mass,cv,residual,pohozaev_defect,iterations"
    assert lines[1] == "0.10000000000000001,6,1,9.9999999999999994e-12,-0,12"
    assert float(lines[1].split(",")[0]) == 0.1


def test_csv_unknown_schema(tmp_path):
    with pytest.raises(ConfigError):
        emit_csv([], "nonsense", str(tmp_path / "x.csv"))


def test_manifest_detects_changes(tmp_path):
    (tmp_path / "a.csv").write_text("t\n0\n")
    (tmp_path / "sub").mkdir()
    (tmp_path / "sub" / "b.hwf").write_bytes(b"1234")
    (tmp_path / "runs.db").write_bytes(b"ledger")
    cfg = {"seed": 3}
    path = write_manifest(str(tmp_path), cfg, schemas=["conserved"], results={"mass": np.float64(6.28)})
    manifest = json.loads((tmp_path / MANIFEST_NAME).read_text())
    assert path.endswith(MANIFEST_NAME)
    assert sorted(manifest["files"]) == ["a.csv", "sub/b.hwf"]
    assert manifest["schemas"] == {"conserved": 1}
    assert manifest["results"]["mass"] == 6.28
    assert manifest["seed"] == 3
    assert verify_manifest(str(tmp_path)) == []

    (tmp_path / "a.csv").write_text("t\n1\n")
    (tmp_path / "sub" / "b.hwf").unlink()
    (tmp_path / "c.csv").write_text("")
    (tmp_path / "runs.db").write_bytes(b"more ledger")
    assert sorted(verify_manifest(str(tmp_path))) == [
        "checksum mismatch: a.csv",
        "missing: sub/b.hwf",
        "unlisted: c.csv",
    ]


def test_trajectory_round_trip(tmp_path, rng):
    first = random_field(rng)
    second = random_field(rng)
    trajectory = Trajectory(
        snapshots=[Snapshot(0.0, first), Snapshot(0.1, second, Frame(0.5, -1.25))],
        conserved_series=[(0.0, ConservedTriple(1.0, 0.5, 0.1)), (0.1, ConservedTriple(1.0, 0.49, 0.1))],
    )
    save_trajectory(str(tmp_path), trajectory)
    loaded = load_trajectory(str(tmp_path))
    assert [s.time for s in loaded.snapshots] == [0.0, 0.1]
    assert loaded.snapshots[1].frame == Frame(0.5, -1.25)
    assert np.array_equal(loaded.snapshots[1].field.values, second.values)
    assert loaded.conserved_series == trajectory.conserved_series
    assert (tmp_path / "snapshots" / "000001.hwf").exists()


def test_missing_trajectory_and_profiles(tmp_path):
    with pytest.raises(ConfigError):
        load_trajectory(str(tmp_path))
    with pytest.raises(ConfigError):
        load_profiles(str(tmp_path))


def test_profiles_round_trip(tmp_path, profile_set):
    save_profiles(str(tmp_path), profile_set)
    loaded = load_profiles(str(tmp_path))
    assert loaded.grid == profile_set.grid
    assert loaded.e1 == profile_set.e1
    assert loaded.p1 == profile_set.p1
    assert loaded.ground.mass == pytest.approx(profile_set.ground.mass, rel=1e-10)
    assert set(loaded.fields) == set(profile_set.fields)
    for name, values in profile_set.fields.items():
        assert np.array_equal(loaded.fields[name], values), name
    assert loaded.identities == profile_set.identities
