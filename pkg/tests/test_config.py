import pytest

from src.config import (
    get_default_config,
    load_config,
    merged,
    parse_config,
    save_config,
    serialize_config,
    validate_config,
)
from src.errors import ConfigError


def test_serialized_config_parses_back():
    cfg = merged(
        get_default_config(),
        {"scenario": "spectrum", "grid": {"n": 512, "box_length": 48.0}, "residual_sweep": {"values": [1e-10, 0.04]}},
    )
    assert parse_config(serialize_config(cfg)) == cfg


def test_parse_overlays_defaults_and_ignores_comments():
    cfg = parse_config("# lab settings\n\ngrid.n = 1024   # finer\nspectrum.operator = minus\n")
    assert cfg["grid"]["n"] == 1024
    assert cfg["spectrum"]["operator"] == "minus"
    assert cfg["grid"]["box_length"] == get_default_config()["grid"]["box_length"]


def test_list_values_become_floats():
    cfg = parse_config("residual_sweep.values = [1e-2, 0.05, 1]")
    assert cfg["residual_sweep"]["values"] == [0.01, 0.05, 1.0]


def test_unknown_key_names_its_line():
    with pytest.raises(ConfigError, match="line 2: unknown key 'grid.m'"):
        parse_config("grid.n = 256\ngrid.m = 3\n")
    with pytest.raises(ConfigError, match="unknown key 'grid'"):
        parse_config("grid = 3")


def test_duplicate_key_is_rejected():
    with pytest.raises(ConfigError, match="already set on line 1"):
        parse_config("seed = 1\nseed = 2\n")


@pytest.mark.parametrize("text", ["grid.n = 2.5", "grid.n = many", "residual_sweep.values = 0.1", "seed 3"])
def test_malformed_values(text):
    with pytest.raises(ConfigError):
        parse_config(text)


@pytest.mark.parametrize(
    "updates, key",
    [
        ({"solver": {"tolerance": -1.0}}, "solver.tolerance"),
        ({"grid": {"n": 100}}, "grid.n"),
        ({"grid": {"box_length": 0.5}}, "grid.box_length"),
        ({"scenario": "nothing"}, "scenario"),
        ({"blowup": {"t_final": 0.1}}, "blowup.t_initial"),
        ({"evolution": {"regrid_floor": 32.0}}, "evolution.regrid_floor"),
        ({"virial": {"radius": float("inf")}}, "virial.radius"),
        ({"mass_curve": {"v_max": 0.95}}, "mass_curve.v_max"),
    ],
)
def test_validation_names_the_key(updates, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        validate_config(merged(get_default_config(), updates))


def test_merged_leaves_the_original_alone():
    cfg = get_default_config()
    out = merged(cfg, {"grid": {"n": 64}})
    assert out["grid"]["n"] == 64
    assert out["grid"]["box_length"] == cfg["grid"]["box_length"]
    assert cfg["grid"]["n"] == 4096


def test_missing_file_gives_defaults(tmp_path):
    assert load_config(str(tmp_path / "absent.conf")) == get_default_config()


def test_save_keeps_a_backup_and_load_falls_back_to_it(tmp_path):
    path = str(tmp_path / "halfwave.conf")
    first = merged(get_default_config(), {"seed": 7})
    save_config(first, path)
    save_config(merged(first, {"seed": 8}), path)
    assert parse_config((tmp_path / "halfwave.conf.bak").read_text())["seed"] == 7
    assert load_config(path)["seed"] == 8
    (tmp_path / "halfwave.conf").write_text("")
    assert load_config(path)["seed"] == 7


def test_load_validates(tmp_path):
    path = tmp_path / "bad.conf"
    path.write_text("solver.tolerance = 2\n")
    with pytest.raises(ConfigError, match=r"solver\.tolerance"):
        load_config(str(path))
