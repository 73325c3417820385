import time

import pytest

from sodsim import cli, runner
from sodsim.config import ConfigError, Scenario, with_field
from sodsim.metrics import read_csv
from sodsim.simulation import InvariantBreach

FIGS = ("fig5.csv", "fig6.csv", "fig7.csv", "fig8.csv", "summary.json")


def config(tmp_path, text="horizon_s: 2.0\n"):
    p = tmp_path / "scenario.yaml"
    p.write_text(text, encoding="utf-8")
    return str(p)


def test_run_twice_is_byte_identical(tmp_path):
    cfg = config(tmp_path)
    for name in ("a", "b"):
        assert cli.main(["run", "--config", cfg, "--seed", "42", "--out", str(tmp_path / name)]) == 0
    for f in FIGS:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_horizon_zero_writes_headers_only(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", config(tmp_path, "horizon_s: 0\n"), "--out", str(out)]) == 0
    assert (out / "fig5.csv").read_text() == "zone_node_count,mean_power_uW\n"
    assert (out / "fig6.csv").read_text() == "sigma_bucket,mean_caching_delay_s\n"
    assert (out / "fig8.csv").read_text() == "time_s,zone_id,mean_residual_j\n"
    assert read_csv(out / "fig7.csv") == [{"mean_eff_throughput": "0.0", "mean_power_uW": "0.0"}]


def test_two_node_scenario_is_quick(tmp_path):
    text = "topology:\n  node_count: 2\n  area_m: [10, 10]\ntraffic:\n  flow_count: 1\n"
    start = time.perf_counter()
    assert cli.main(["run", "--config", config(tmp_path, text), "--out", str(tmp_path / "o")]) == 0
    assert time.perf_counter() - start < 1.0


def test_env_var_sets_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert cli.main(["run", "--config", config(tmp_path, "horizon_s: 0.5\n")]) == 0
    assert (tmp_path / "env" / "summary.json").exists()
    assert cli.main(["run", "--config", config(tmp_path, "horizon_s: 0.5\n"),
                     "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "summary.json").exists()


def test_decision_log_is_written(tmp_path):
    log = tmp_path / "decisions.ndjson"
    assert cli.main(["run", "--config", config(tmp_path), "--out", str(tmp_path / "o"),
                     "--decision-log", str(log)]) == 0
    assert log.read_text().count("\n") > 10


def test_exit_codes(tmp_path, monkeypatch, capsys):
    bad = config(tmp_path, "radio:\n  loss_exponent: 5\n")
    assert cli.main(["validate", "--config", bad]) == 1
    assert "radio.loss_exponent" in capsys.readouterr().err
    assert cli.main(["validate", "--config", config(tmp_path)]) == 0
    assert cli.main(["run", "--config", str(tmp_path / "missing.yaml")]) == 1
    assert cli.main(["sweep", "--config", config(tmp_path), "--sweep", "sigma_band=1,2",
                     "--out", str(tmp_path / "s")]) == 1

    def breach(*args, **kwargs):
        raise InvariantBreach("packet conservation failed")
    monkeypatch.setattr(cli, "run_once", breach)
    assert cli.main(["run", "--config", config(tmp_path), "--out", str(tmp_path / "o")]) == 2


def test_sweep_layout(tmp_path):
    cfg = config(tmp_path, "horizon_s: 1.0\n")
    out = tmp_path / "sweep"
    assert cli.main(["sweep", "--config", cfg, "--sweep", "comm_range_m=6,9,12,15",
                     "--out", str(out)]) == 0
    points = sorted(p.name for p in out.iterdir() if p.is_dir())
    assert points == ["point_000", "point_001", "point_002", "point_003"]
    rows = read_csv(out / "sweep.csv")
    assert [r["value"] for r in rows] == ["6", "9", "12", "15"]
    assert [int(r["seed"]) for r in rows] == [42, 43, 44, 45]
    assert read_csv(out / "frontier.csv")


def test_grid_product_and_repeatability(tmp_path):
    base = with_field(Scenario(), "horizon_s", 0.5)
    axes = [runner.parse_sweep_arg("comm_range_m=9,12"),
            runner.parse_sweep_arg("traffic.flow_count=2,4,6")]
    assert len(runner.sweep_points(base, axes)) == 6
    a = runner.run_sweep(base, axes, tmp_path / "a")
    b = runner.run_sweep(base, axes, tmp_path / "b", jobs=2)
    assert len(a) == 6
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()


def test_sweep_arg_parsing():
    axis = runner.parse_sweep_arg("zone_radius_hops=1,2,3")
    assert axis.path == "topology.zone_radius_hops" and axis.values == (1, 2, 3)
    with pytest.raises(ConfigError):
        runner.parse_sweep_arg("area_m=1,2")
    with pytest.raises(ConfigError):
        runner.parse_sweep_arg("comm_range_m")
    with pytest.raises(ConfigError):
        runner.parse_sweep_arg("comm_range_m=")
