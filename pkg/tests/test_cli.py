import csv
import io
import json

import pytest

from exowalk import cli
from exowalk.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK, EXIT_SCHEMA, RunConfig, run

SHORT = {"duration_s": 20.0, "settle_s": 5.0}
FLAT_SCENARIO = '[{"terrain": "FW", "duration_s": 10}]'


@pytest.fixture
def config_file(tmp_path):
    def make(**overrides):
        path = tmp_path / f"config{len(list(tmp_path.glob('config*.json')))}.json"
        path.write_text(json.dumps({**SHORT, **overrides}))
        return str(path)
    return make


def read_json(path):
    return json.loads(path.read_text())


def test_default_config_is_bundled():
    assert RunConfig.default() == RunConfig()
    assert RunConfig.from_dict(RunConfig().to_dict()) == RunConfig()


def test_simulate_unassisted_is_flagged(tmp_path, config_file):
    out = tmp_path / "out"
    assert run(["simulate", "--config", config_file(), "--beta", "0", "--out", str(out)]) == EXIT_OK
    m = read_json(out / "metrics.json")
    assert m["condition"] == "unassisted"
    assert m["metrics"]["negative_power_pct"] is None
    assert m["metrics"]["max_torque_per_kg"] == 0.0
    manifest = read_json(out / "manifest.json")
    assert m["config_hash"] == manifest["config_hash"] and m["seed"] == manifest["seed"]
    assert set(manifest["versions"]) >= {"exowalk", "numpy", "scipy", "python"}


def test_simulate_is_deterministic_and_analyze_agrees(tmp_path, config_file):
    cfg = config_file()
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["simulate", "--config", cfg, "--beta", "2.3", "--out", str(a)]) == EXIT_OK
    assert run(["simulate", "--config", cfg, "--beta", "2.3", "--out", str(b)]) == EXIT_OK
    for name in ("trajectory.csv", "metrics.json", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    c = tmp_path / "c"
    assert run(["analyze", str(a / "trajectory.csv"), "--config", cfg, "--out", str(c)]) == EXIT_OK
    assert read_json(c / "metrics.json")["metrics"] == read_json(a / "metrics.json")["metrics"]


def test_replay_is_byte_identical(tmp_path, config_file):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["simulate", "--config", config_file(), "--beta", "1.5", "--seed", "9", "--out", str(a)]) == EXIT_OK
    assert run(["replay", str(a / "manifest.json"), "--out", str(b)]) == EXIT_OK
    for name in ("trajectory.csv", "metrics.json", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_replay_detects_tampering(tmp_path, config_file):
    a = tmp_path / "a"
    run(["simulate", "--config", config_file(), "--beta", "1.5", "--out", str(a)])
    manifest = read_json(a / "manifest.json")
    manifest["config"]["seed"] = 99
    (a / "manifest.json").write_text(json.dumps(manifest))
    assert run(["replay", str(a / "manifest.json"), "--out", str(tmp_path / "b")]) == EXIT_CONFIG


def test_sweep_single_gain_matches_simulate(tmp_path, config_file):
    cfg = config_file()
    s, w = tmp_path / "s", tmp_path / "w"
    run(["simulate", "--config", cfg, "--beta", "0", "--out", str(s)])
    assert run(["sweep", "--config", cfg, "--grid", "0", "--out", str(w)]) == EXIT_OK
    sim = read_json(s / "metrics.json")["metrics"]
    (row,) = read_json(w / "metrics.json")["rows"]
    assert row["status"] == "ok"
    for k in cli.SWEEP_FIELDS[2:-1]:
        assert row[k] == sim[k], k


def test_sweep_is_sorted_and_keeps_failures(tmp_path, config_file):
    cfg = config_file(human={"kp": 0.0, "kd": 0.0})
    out = tmp_path / "w"
    assert run(["sweep", "--config", cfg, "--grid", "2,0", "--out", str(out)]) == EXIT_OK
    rows = list(csv.DictReader(io.StringIO((out / "sweep.csv").read_text())))
    assert [float(r["beta"]) for r in rows] == [0.0, 2.0]
    assert all(r["status"] == "failed" and r["error"] for r in rows)


def test_optimize_writes_trial_log(tmp_path, config_file):
    scen = tmp_path / "short.scenario"
    scen.write_text(FLAT_SCENARIO)
    out = tmp_path / "o"
    assert run(["optimize", "--config", config_file(), "--scenario", str(scen), "--out", str(out)]) == EXIT_OK
    trials = [json.loads(line) for line in (out / "trials.jsonl").read_text().splitlines()]
    assert len(trials) == 5
    manifest = read_json(out / "manifest.json")
    assert all(t["config_hash"] == manifest["config_hash"] for t in trials)
    assert all(1.0 <= t["beta"] <= 2.5 for t in trials)
    assert set(read_json(out / "metrics.json")["terrain_means"]) == {"FW"}


def test_optimize_bundled_path_has_45_trials(tmp_path):
    out = tmp_path / "o"
    assert run(["optimize", "--out", str(out)]) == EXIT_OK
    assert len((out / "trials.jsonl").read_text().splitlines()) == 45
    assert set(read_json(out / "metrics.json")["terrain_means"]) == {"FW", "SA", "SD"}


def test_output_directory_from_environment(tmp_path, monkeypatch, config_file):
    cfg = config_file(duration_s=12.0, settle_s=2.0)
    monkeypatch.setenv(cli.ENV_OUT, str(tmp_path / "env"))
    assert run(["simulate", "--config", cfg, "--beta", "1"]) == EXIT_OK
    assert (tmp_path / "env" / "metrics.json").exists()
    assert run(["simulate", "--config", cfg, "--beta", "1", "--out", str(tmp_path / "flag")]) == EXIT_OK
    assert (tmp_path / "flag" / "metrics.json").exists()


@pytest.mark.parametrize("args", [
    ["simulate", "--beta", "5"],
    ["sweep", "--grid", "1,x"],
    ["sweep", "--grid", "-1"],
    ["simulate", "--config", "/nonexistent.json"],
])
def test_bad_arguments_exit_with_config_error(tmp_path, args):
    assert run(args + ["--out", str(tmp_path)]) == EXIT_CONFIG


def test_unknown_config_key_is_rejected(tmp_path, config_file):
    assert run(["simulate", "--config", config_file(colour="red"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_malformed_trajectory_exits_with_schema_error(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    assert run(["analyze", str(bad)]) == EXIT_SCHEMA
    assert "row 1" in capsys.readouterr().err


def test_collapse_exits_with_divergence(tmp_path, config_file):
    cfg = config_file(human={"kp": 0.0, "kd": 0.0})
    assert run(["simulate", "--config", cfg, "--beta", "0", "--out", str(tmp_path)]) == EXIT_DIVERGED


def test_analyze_with_gas_logs(tmp_path, config_file):
    a = tmp_path / "a"
    run(["simulate", "--config", config_file(), "--beta", "2.3", "--out", str(a)])
    t = [i / 6 for i in range(37)]

    def gas(name, vo2, vco2):
        path = tmp_path / name
        path.write_text("time_min,vo2_lmin,vco2_lmin\n" + "".join(f"{x},{vo2},{vco2}\n" for x in t))
        return str(path)

    report = cli.cmd_analyze(a / "trajectory.csv", RunConfig.from_dict(SHORT),
                             gas("exo.csv", 0.944, 0.8), gas("noexo.csv", 1.0, 0.8 / 0.944),
                             gas("rest.csv", 0.0, 0.0))
    assert report["energetics"]["reduction_pct"] == pytest.approx(-5.6, abs=1e-9)
