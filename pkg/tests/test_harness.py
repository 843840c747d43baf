import json
import time

import numpy as np
import pytest

import zdshield.cli as cli
from conftest import scenario
from zdshield.config import ScenarioConfig, load_preset, preset_names, schema, set_path
from zdshield.errors import ConfigError, NonFiniteState
from zdshield.harness import emit_outputs, metrics_json, run_scenario, sweep, sweep_csv

PRESETS = ["scenario-a", "scenario-b", "scenario-c"]


def test_presets_listed():
    assert preset_names() == PRESETS


@pytest.mark.parametrize("name", PRESETS)
def test_config_round_trip(name):
    cfg = load_preset(name)
    again = ScenarioConfig.from_json(cfg.to_json())
    assert again.to_dict() == cfg.to_dict()
    assert again.to_json() == cfg.to_json()
    assert again.hash() == cfg.hash()


@pytest.mark.parametrize("name", PRESETS)
def test_presets_match_schema(name):
    jsonschema = pytest.importorskip("jsonschema")
    jsonschema.validate(json.loads(load_preset(name).to_json()), schema())


def test_config_errors_are_field_level():
    data = load_preset("scenario-a").to_dict()
    data["grid"]["dt"] = -1.0
    data["bogus"] = 1
    with pytest.raises(ConfigError) as info:
        ScenarioConfig.from_dict(data)
    text = str(info.value)
    assert "grid.dt" in text and "bogus" in text


def test_set_path_rejects_unknown():
    with pytest.raises(ConfigError):
        set_path(load_preset("scenario-a").to_dict(), "recovery.nothing", 1)


def test_attack_disabled_baseline():
    cfg = ScenarioConfig.from_dict(set_path(load_preset("scenario-a").to_dict(), "attack.enabled", False))
    res = run_scenario(cfg)
    assert res.metrics["detection_time"] is None
    traj = res.trajectory
    late = traj.window(700.0, 1000.0)
    assert np.max(np.abs(traj.stack(["x1", "x2"])[late] - 10.0)) <= 1e-2


def test_embedded_clean_run_matches_standalone():
    res = scenario("scenario-a")
    alone = res.bench.run(attack=False, recovery=False, detector=res.detector).trajectory
    assert alone.to_csv() == res.runs["clean"].trajectory.to_csv()


def test_metrics_key_order_is_stable():
    keys = list(scenario("scenario-a").metrics)
    assert keys[:3] == ["scenario", "engine", "seed"]
    assert list(json.loads(metrics_json(scenario("scenario-a").metrics))) == keys


def test_emit_outputs_deterministic(tmp_path):
    cfg = ScenarioConfig.from_dict(set_path(load_preset("scenario-a").to_dict(), "grid.t_end", 1000.0))
    first = [p.read_bytes() for p in map(__import__("pathlib").Path, emit_outputs(run_scenario(cfg), tmp_path / "a"))]
    second = [p.read_bytes() for p in map(__import__("pathlib").Path, emit_outputs(run_scenario(cfg), tmp_path / "b"))]
    assert first == second
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["metrics.json", "outputs.svg", "recovery.svg", "residuals.svg", "trajectory.csv",
                     "zero_dynamics.svg"]


def test_degenerate_grid_writes_single_row(tmp_path):
    data = load_preset("scenario-a").to_dict()
    for path, value in (("grid.t_end", 0.0), ("attack.enabled", False), ("attack.t_on", -1.0),
                        ("attack.t_off", 0.0)):
        data = set_path(data, path, value)
    res = run_scenario(ScenarioConfig.from_dict(data))
    emit_outputs(res, tmp_path)
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert len(lines) == 2 and lines[0].startswith("t,")
    assert (tmp_path / "outputs.svg").stat().st_size > 0


def test_sweep_empty():
    rows = sweep(load_preset("scenario-a"), "recovery.lam", [])
    assert rows == []
    assert sweep_csv(rows).count("\n") == 1


def test_sweep_learning_rate():
    rows = sweep(load_preset("scenario-a"), "recovery.lam", [0.1, 0.5, 1.0, -1.0])
    assert [r["error"] == "" for r in rows] == [True, True, True, False]
    assert all(r["gamma"] <= 0.05 for r in rows[:3])


def test_sweep_noise_variance():
    rows = sweep(load_preset("scenario-b"), "noise.variance", [0.0, 0.01, 0.05])
    gammas = [r["gamma"] for r in rows]
    print("noise variance sweep gamma:", gammas)
    assert all(g is not None and np.isfinite(g) for g in gammas)


def test_cli_preset_run(tmp_path, capsys):
    start = time.perf_counter()
    assert cli.main(["preset", "scenario-a", "--out", str(tmp_path)]) == 0
    assert time.perf_counter() - start < 10.0
    assert (tmp_path / "metrics.json").exists()
    assert "detection_time=" in capsys.readouterr().out


def test_cli_seed_and_dt_overrides(tmp_path):
    assert cli.main(["preset", "scenario-b", "--seed", "7", "--dt", "0.02", "--out", str(tmp_path)]) == 0
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["seed"] == 7 and metrics["dt"] == 0.02


def test_cli_config_errors(tmp_path):
    assert cli.main(["preset", "nope", "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"grid": {"dt": 0}}')
    assert cli.main(["run", str(bad), "--out", str(tmp_path)]) == 2
    assert cli.main(["sweep", "scenario-a", "--param", "no.such", "--values", "1", "--out", str(tmp_path)]) == 2


def test_cli_fault_exit_code(tmp_path, monkeypatch):
    def boom(cfg):
        raise NonFiniteState("blow-up", t=1.0, column="z1")
    monkeypatch.setattr(cli, "run_scenario", boom)
    assert cli.main(["preset", "scenario-a", "--out", str(tmp_path)]) == 3


def test_cli_list_and_sweep(tmp_path, capsys):
    assert cli.main(["list-presets"]) == 0
    assert capsys.readouterr().out.split() == PRESETS
    assert cli.main(["sweep", "scenario-a", "--param", "recovery.lam", "--values", "", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "sweep.csv").read_text().startswith("param,value")
