from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from projfilter import bench, cli
from projfilter.bench import (
    OUT_ENV,
    ScenarioConfig,
    _nanmean,
    config_from_mapping,
    epsilon_sweep,
    increment_checksum,
    load_config,
    probe_orders,
    result_csv,
    run_scenario,
    run_seed,
    simulate_observations,
    summarize,
    summary_csv,
    validate,
)
from projfilter.errors import BoundaryError, ConfigError, NumericalError
from projfilter.filters import FILTERS

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "cubic_sensor.toml"
SHORT = dict(horizon=0.02, dt=1e-3, seeds=(0, 1), roster=("jet_hell", "vec_l2", "ekf", "adf"))


@pytest.fixture(autouse=True)
def no_env_out(monkeypatch):
    monkeypatch.delenv(OUT_ENV, raising=False)


def test_shipped_config_matches_defaults():
    cfg = load_config(CONFIG)
    assert cfg == ScenarioConfig(output="out")
    assert cfg.steps == 1000 and cfg.roster == FILTERS and cfg.seeds == tuple(range(20))


def test_overrides_and_coercion():
    cfg = load_config(CONFIG, {"model.epsilon": "0.1", "run.seeds": "3:6", "run.roster": "jet_hell,adf",
                               "probe.antithetic": "false", "run.dt": "0.002"})
    assert cfg.epsilon == 0.1 and cfg.seeds == (3, 4, 5) and cfg.roster == ("jet_hell", "adf")
    assert cfg.probe_antithetic is False and cfg.dt == 0.002
    assert config_from_mapping({"run": {"seeds": [1, 2]}}).seeds == (1, 2)


@pytest.mark.parametrize("data", [
    {"model": {"epsilon": -0.1}},
    {"model": {"preset": "quartic"}},
    {"run": {"horizon": 1.0, "dt": 0.3}},
    {"grid": {"nodes": 50}},
    {"run": {"roster": ["jet_hell", "particle"]}},
    {"run": {"seeds": []}},
    {"model": {"colour": "red"}},
    {"model": 3},
    {"grid": {"nodes": 400.5}},
    {"probe": {"antithetic": "maybe"}},
    {"run": {"dt": "fast"}},
])
def test_config_errors(data):
    with pytest.raises(ConfigError):
        config_from_mapping(data)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[model\nepsilon = ")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(CONFIG, {"model.nonsense": "1"})


def test_output_dir_precedence(monkeypatch, tmp_path):
    cfg = ScenarioConfig(output=str(tmp_path / "a"))
    assert cfg.output_dir() == tmp_path / "a"
    assert ScenarioConfig().output_dir() == Path("out")
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "b"))
    assert cfg.output_dir() == tmp_path / "b"


def test_observations_deterministic_and_seed_dependent():
    cfg = ScenarioConfig(**SHORT)
    a, b, c = simulate_observations(cfg, 0), simulate_observations(cfg, 0), simulate_observations(cfg, 1)
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    assert not np.array_equal(a[2], c[2])
    assert len(a[2]) == cfg.steps and len(a[0]) == cfg.steps + 1


def test_run_csv_is_byte_identical_and_well_formed():
    cfg = ScenarioConfig(**SHORT)
    text = result_csv(run_seed(cfg, 0), cfg.roster)
    assert text == result_csv(run_seed(cfg, 0), cfg.roster)
    lines = text.split("\n")
    assert "\r" not in text and lines[-1] == ""
    _, _, dY = simulate_observations(cfg, 0)
    assert lines[0] == f"# dy_sha256={increment_checksum(dY)}"
    header = lines[1].split(",")
    assert header[:5] == ["t", "jet_hell.mean", "jet_hell.sd", "jet_hell.res_l2", "jet_hell.res_hell"]
    assert header[-2:] == ["ref.mean", "ref.sd"]
    assert len(lines) == cfg.steps + 4
    row = lines[3].split(",")
    assert float(row[0]) == pytest.approx(1e-3)
    assert all(v == "%.17g" % float(v) for v in row)
    # residuals are non-negative
    values = np.array([[float(v) for v in line.split(",")] for line in lines[2:-1]])
    assert np.all(values[:, [3, 4, 7, 8, 11, 12, 15, 16]] >= 0)


def test_run_scenario_writes_files(tmp_path):
    cfg = ScenarioConfig(**SHORT, output=str(tmp_path))
    results, summary = run_scenario(cfg)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["run_seed0.csv", "run_seed1.csv", "summary.csv"]
    assert (tmp_path / "summary.csv").read_text() == summary_csv(summary, cfg.roster)
    assert (tmp_path / "run_seed1.csv").read_text() == result_csv(results[1], cfg.roster)
    first = (tmp_path / "summary.csv").read_text().split("\n")[0].split(",")
    assert first[1:6] == ["jet_hell.mean", "jet_hell.sd", "jet_hell.res_l2", "jet_hell.res_hell", "jet_hell.seeds"]


def test_parallel_seeds_match_serial():
    cfg = ScenarioConfig(**SHORT)
    serial, _ = run_scenario(cfg, write=False)
    parallel, _ = run_scenario(replace(cfg, workers=2), write=False)
    for a, b in zip(serial, parallel):
        assert result_csv(a, cfg.roster) == result_csv(b, cfg.roster)


def test_zero_epsilon_filters_agree():
    cfg = ScenarioConfig(epsilon=0.0, horizon=0.1, seeds=(0,))
    r = run_seed(cfg, 0)
    means = np.array([r.params[n][:, 0] for n in FILTERS])
    sds = np.array([r.params[n][:, 1] for n in FILTERS])
    assert np.ptp(means, axis=0).max() < 1e-4 and np.ptp(sds**2, axis=0).max() < 1e-4


def test_truncated_series_drop_out_of_summary(monkeypatch):
    real = bench.make_stepper

    def flaky(name, model, order=40):
        step = real(name, model, order)
        if name != "ekf":
            return step

        def wrapped(theta, t, dt, dY):
            if t >= 4.5e-3:
                raise BoundaryError("test boundary")
            return step(theta, t, dt, dY)

        return wrapped

    monkeypatch.setattr(bench, "make_stepper", flaky)
    cfg = ScenarioConfig(**SHORT)
    r0, r1 = run_seed(cfg, 0), run_seed(cfg, 1)
    assert r0.truncated["ekf"] == 6 and r0.truncated["adf"] is None
    assert "BoundaryError" in r0.flags["ekf"]
    assert np.all(np.isnan(r0.params["ekf"][6:])) and np.all(np.isfinite(r0.params["ekf"][:6]))
    # seed 1 runs clean, so the average after truncation is seed 1 alone
    monkeypatch.setattr(bench, "make_stepper", real)
    r1 = run_seed(cfg, 1)
    s = summarize([r0, r1], cfg.roster)
    assert s.seeds_used["ekf"][5] == 2 and s.seeds_used["ekf"][6] == 1
    assert np.array_equal(s.res_l2["ekf"][6:], r1.res_l2["ekf"][6:])


def test_nanmean():
    stack = np.array([[1.0, np.nan, np.nan], [3.0, 4.0, np.nan]])
    out = _nanmean(stack)
    assert out[0] == 2.0 and out[1] == 4.0 and np.isnan(out[2])


def test_epsilon_sweep(tmp_path):
    cfg = ScenarioConfig(output=str(tmp_path))
    res = epsilon_sweep(cfg)
    assert 1.8 <= res.slopes["ito_jet"] <= 2.2
    assert (tmp_path / "epsilon_sweep.csv").exists()
    zero = epsilon_sweep(cfg, [0.0, 0.01, 0.02], write=False)
    for name in ("ito_jet", "ito_vector", "stratonovich"):
        assert zero.differences[name][0] <= 1e-10


def test_epsilon_sweep_exact_match_flag(monkeypatch):
    monkeypatch.setattr(bench, "hellinger_drifts", lambda e, theta, order=40: {
        n: np.array([0.0, -e]) for n in ("adf", "ito_jet", "ito_vector", "stratonovich", "ekf")})
    res = epsilon_sweep(ScenarioConfig(), write=False)
    assert all(res.exact_match.values()) and all(np.isnan(s) for s in res.slopes.values())
    assert "exact_match" in bench.sweep_csv(res)


def test_probe_orders_small(tmp_path):
    cfg = ScenarioConfig(output=str(tmp_path), probe_trials=2000, probe_exponents=(4, 5, 6))
    table = probe_orders(cfg)
    assert len(table.rows) == 6
    text = (tmp_path / "probe_orders.csv").read_text()
    assert text.startswith("kind,criterion,horizon,error,std_error,slope,norm_slope,degenerate\n")
    assert len(text.strip().split("\n")) == 1 + 6 * 3


def test_validate_default_config():
    checks = validate(ScenarioConfig())
    assert checks and all(c.passed for c in checks), [c for c in checks if not c.passed]
    narrow = validate(ScenarioConfig(half_width=3.0))
    assert not narrow[0].passed


def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    assert cli.main(["validate", str(CONFIG)]) == 0
    assert cli.main(["validate", str(tmp_path / "missing.toml")]) == 2
    assert cli.main(["validate", str(CONFIG), "--bogus", "1"]) == 2
    assert cli.main(["validate", str(CONFIG), "--model.epsilon"]) == 2
    assert cli.main(["launch", str(CONFIG)]) == 2
    assert cli.main(["validate", str(CONFIG), "--grid.half_width=3"]) == 3
    out = tmp_path / "sweep"
    assert cli.main(["sweep-epsilon", str(CONFIG), "--out", str(out)]) == 0
    assert (out / "epsilon_sweep.csv").exists()

    def boom(config):
        raise NumericalError("diverged")

    monkeypatch.setattr(cli, "run_scenario", boom)
    assert cli.main(["run", str(CONFIG)]) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_cli_run_with_overrides_and_env(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    rc = cli.main(["run", str(CONFIG), "--run.horizon", "0.01", "--run.seeds", "0:2",
                   "--run.roster=jet_hell,kalman", "--out", str(tmp_path / "flag")])
    assert rc == 0
    assert (tmp_path / "env" / "summary.csv").exists() and not (tmp_path / "flag").exists()
