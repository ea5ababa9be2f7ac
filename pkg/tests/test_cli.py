import csv
import json
import math

import pytest

from rcsl import cli
from rcsl.cli import PROVENANCES, SCHEMAS, UsageError, main, read_config, resolve, run, to_csv, to_json, write_config

FAST = {
    "decoherence": {"regime": "large-ell"},
    "mass-spread": {},
    "energy-growth": {},
    "trajectories": {"samples": "200", "slabs": "5", "cells": "20"},
    "scattering": {"samples": "4000", "grid_n": "512"},
    "wavepacket": {"s": "5", "sigma": "2"},
    "constants": {},
}


def strip_time(text):
    env = json.loads(text)
    env.pop("wall_time")
    return env


@pytest.fixture(scope="module")
def envelopes():
    return {c: run(c, FAST[c], seed=3) for c in SCHEMAS}


def test_every_command_is_covered():
    assert set(FAST) == set(SCHEMAS) == set(cli.COMMANDS)


@pytest.mark.parametrize("command", sorted(FAST))
def test_every_result_is_tagged(envelopes, command):
    env = envelopes[command]
    assert set(env) == {"command", "parameters", "results", "seed", "wall_time", "version"}
    assert env["results"]
    for row in env["results"]:
        assert set(row) == {"name", "value", "error_estimate", "provenance"}
        assert row["provenance"] in PROVENANCES


def test_untagged_result_rejected():
    with pytest.raises(ValueError):
        cli.Results().add("x", 1.0, "guess")


@pytest.mark.parametrize("command", ["trajectories", "decoherence", "constants"])
def test_byte_identical_envelopes(command, capsys):
    args = [command, *(f"{k}={v}" for k, v in FAST[command].items()), "--seed", "5"]
    assert main(args) == 0
    first = capsys.readouterr().out
    assert main(args) == 0
    second = capsys.readouterr().out
    a, b = strip_time(first), strip_time(second)
    assert a == b
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_config_round_trip_flat(tmp_path):
    env = run("trajectories", FAST["trajectories"], seed=8)
    path = tmp_path / "run.cfg"
    path.write_text("# trajectory run\n" + write_config(env["parameters"], env["seed"], env["command"]))
    again = run("trajectories", config=read_config(str(path)))
    assert again["parameters"] == env["parameters"]
    assert again["seed"] == 8
    assert again["results"] == env["results"]


def test_config_round_trip_envelope(tmp_path):
    env = run("trajectories", FAST["trajectories"], seed=2)
    path = tmp_path / "env.json"
    path.write_text(to_json(env))
    out = tmp_path / "again.json"
    assert main(["trajectories", "--config", str(path), "--out", str(out)]) == 0
    again = json.loads(out.read_text())
    assert again["results"] == env["results"] and again["seed"] == 2


def test_overrides_beat_config(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("regime = large-ell\nT = 0.01\n")
    env = run("decoherence", {"T": "0.02"}, config=read_config(str(path)))
    assert env["parameters"]["T"] == 0.02 and env["parameters"]["regime"] == "large-ell"


def test_seed_precedence(monkeypatch):
    monkeypatch.setenv("RCSL_SEED", "17")
    assert run("constants")["seed"] == 17
    assert run("constants", seed=4)["seed"] == 4
    assert run("constants", config={"seed": "9"}, seed=None)["seed"] == 17
    monkeypatch.delenv("RCSL_SEED")
    assert run("constants", config={"seed": "9"})["seed"] == 9
    assert run("constants")["seed"] == 0


def test_unknown_key_rejected(capsys):
    with pytest.raises(UsageError):
        resolve("mass-spread", {"colour": "red"})
    assert main(["mass-spread", "colour=red"]) == 2
    assert "colour" in capsys.readouterr().err


@pytest.mark.parametrize("args", [
    ["mass-spread", "ell=-1"],
    ["decoherence", "regime=medium"],
    ["trajectories", "p_left=1.5"],
    ["mass-spread", "T"],
    ["mass-spread", "--config", "/nonexistent/run.cfg"],
])
def test_usage_errors_exit_2(args):
    assert main(args) == 2


def test_non_convergence_exit_3(capsys):
    assert main(["scattering", "grid_n=256", "samples=1000"]) == 3
    assert "grid" in capsys.readouterr().err


def test_budget_exhaustion_exit_4(capsys):
    assert main(["decoherence", "regime=full", "budget=1000", "strict=true"]) == 4
    assert "budget" in capsys.readouterr().err


def test_csv_projection(envelopes, tmp_path):
    out = tmp_path / "r.csv"
    assert main(["constants", "--format", "csv", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert rows and all(r["provenance"] in PROVENANCES for r in rows)
    assert len(rows) == len(envelopes["constants"]["results"])
    text = to_csv(envelopes["mass-spread"])
    assert text.splitlines()[0] == "name,value,error_estimate,provenance"


def test_trajectory_csv(tmp_path):
    path = tmp_path / "traj.csv"
    prm = dict(FAST["trajectories"], samples="20", trajectory_csv=str(path))
    run("trajectories", prm)
    rows = list(csv.DictReader(path.open()))
    assert list(rows[0]) == ["trajectory_id", "slab_index", "weight_left", "weight_right", "winner", "censored"]
    assert len(rows) == 20 * 6
    for r in rows:
        assert math.isclose(float(r["weight_left"]) + float(r["weight_right"]), 1.0, abs_tol=1e-12)
        assert r["censored"] in ("0", "1")


def test_decoherence_zero_displacement():
    env = run("decoherence", {"regime": "large-ell", "d": "0"})
    row = next(r for r in env["results"] if r["name"] == "I_numeric")
    assert row["value"] == 0.0


def test_zero_strength_gives_zero_spread():
    env = run("mass-spread", {"Lam": "0"})
    spreads = [r for r in env["results"] if "spread" in r["name"]]
    assert spreads and all(r["value"] == 0.0 for r in spreads)


def test_vacuum_trajectories_inert():
    env = run("trajectories", dict(FAST["trajectories"], samples="5", vacuum="true"))
    row = next(r for r in env["results"] if r["name"] == "vacuum_max_amplitude_change")
    assert row["value"] == 0.0
