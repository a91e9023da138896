import csv
from pathlib import Path

import numpy as np
import pytest
import yaml

from dcbackstep import config
from dcbackstep.cli import AGGREGATE_COLUMNS, main
from dcbackstep.config import ConfigError, load_dict, scenario_from_dict, set_path


@pytest.fixture
def base_cfg():
    return load_dict("paper-fig3")


def write_cfg(tmp_path, cfg, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def test_preset_fidelity():
    sc = config.load_preset("paper-fig3")
    assert [d.E for d in sc.dgus] == [24.0] * 4
    assert [d.R_t for d in sc.dgus] == [0.1] * 4
    assert [d.L_t for d in sc.dgus] == [1.3e-3, 1.2e-3, 1.6e-3, 1.4e-3]
    assert sum(d.C_t for d in sc.dgus) == pytest.approx(40e-3)
    assert (sc.load.G_l, sc.load.I_l, sc.load.P_l) == (1.0, 5.0, 120.0)
    assert sc.setpoint == 12.0
    assert (sc.barrier.v_min, sc.barrier.v_max) == (11.8, 12.2)
    g = sc.gains
    assert list(g.ratios) == [0.4, 0.3, 0.2, 0.1]
    assert (g.kappa1, g.kappa2) == (1.0, 10.0)
    assert list(g.kappa2i) == [15.0] * 3
    assert (g.gamma1, g.gamma2, g.gamma3) == (100.0, 100.0, 100.0)
    assert list(g.gamma4) == list(g.gamma5) == [100.0] * 4
    assert list(g.gamma6) == [200.0] * 4
    assert 1.0 / sc.dt_ctrl == pytest.approx(20e3)
    assert [e.t for e in sc.events] == [0.2, 0.4, 0.6]
    assert [e.load.P_l for e in sc.events] == [120.0, 240.0, 120.0]
    assert all(e.load.G_l == 1e-6 and e.load.I_l == 0.0 for e in sc.events)
    assert sc.t_end == 0.8
    assert sc.switching_frequency == 50e3


def test_preset_list(capsys):
    assert main(["preset-list"]) == 0
    assert "paper-fig3" in capsys.readouterr().out.split()


@pytest.mark.parametrize("path,value,field", [
    ("barrier.v_min", 12.3, "barrier.v_min"),
    ("barrier.v_min", 12.2, "barrier.v_min"),
    ("gains.gamma1", 0.0, "gains.gamma1"),
    ("gains.kappa2i", -1.0, "gains.kappa2i"),
    ("gains.ratios", [0.5, 0.5, 0.1, 0.1], "gains.ratios"),
    ("dgus.2.L_t", 0.0, "dgus.2.L_t"),
    ("simulation.dt_ctrl", 2.5e-5, "simulation.dt_ctrl"),
    ("simulation.controller", "fast", "simulation.controller"),
    ("initial.V_o", 13.0, "initial.V_o"),
    ("load.P_l", "lots", "load.P_l"),
    ("events.1.load.Q", 1.0, "events.1.load.Q"),
    ("simulation.t_endd", 1.0, "simulation.t_endd"),
])
def test_validation_paths(base_cfg, path, value, field):
    cfg = set_path(base_cfg, path, value)
    with pytest.raises(ConfigError) as exc:
        scenario_from_dict(cfg)
    assert exc.value.path == field


def test_validate_command(tmp_path, base_cfg, capsys):
    assert main(["validate", "--config", "paper-fig3"]) == 0
    bad = write_cfg(tmp_path, set_path(base_cfg, "barrier.v_min", 12.5))
    assert main(["validate", "--config", bad]) != 0
    assert "barrier.v_min" in capsys.readouterr().err


def test_estimate_options(base_cfg):
    sc = scenario_from_dict(set_path(base_cfg, "estimates", "truth"))
    assert sc.estimates.theta[1] == 120.0
    sc = scenario_from_dict(set_path(base_cfg, "estimates.nominal_error", 0.2))
    assert sc.estimates.mu[0] == pytest.approx(1.2 * 24 / 1.3e-3)
    assert sc.estimates.c_inv == 25.0
    sc = scenario_from_dict(base_cfg)
    assert np.allclose(sc.initial.I_t, [10.8, 8.1, 5.4, 2.7])


def test_round_trip_validate_equals_run(tmp_path, base_cfg, monkeypatch):
    # validate and run agree on acceptance for a mix of good and bad configs
    monkeypatch.setenv("DCBACKSTEP_OUT", str(tmp_path / "runs"))
    cases = [
        set_path(set_path(base_cfg, "simulation.t_end", 0.002), "events", []),
        set_path(base_cfg, "gains.gamma3", -2.0),
        set_path(base_cfg, "initial.V_o", 13.0),
        set_path(base_cfg, "simulation.dt_plant", 2e-5 / 3),
    ]
    for i, cfg in enumerate(cases):
        path = write_cfg(tmp_path, cfg, f"c{i}.yaml")
        v = main(["validate", "--config", path])
        r = main(["run", "--config", path, "--out", str(tmp_path / f"o{i}")])
        assert (v == 0) == (r != 2), i


def test_run_rejects_initial_voltage(tmp_path, base_cfg, capsys):
    path = write_cfg(tmp_path, set_path(base_cfg, "initial.V_o", 13.0))
    assert main(["run", "--config", path, "--out", str(tmp_path / "o")]) != 0
    err = capsys.readouterr().err
    assert "initial.V_o" in err and "(11.8, 12.2)" in err


def test_run_outputs_and_force(tmp_path, base_cfg, capsys):
    cfg = set_path(base_cfg, "simulation.t_end", 0.005)
    path = write_cfg(tmp_path, cfg)
    out = tmp_path / "out"
    assert main(["run", "--config", path, "--out", str(out), "--plot", "--refine"]) == 0
    assert (out / "trace.csv").exists() and (out / "voltage.svg").exists()
    summary = yaml.safe_load((out / "summary.yaml").read_text())
    assert summary["status"] == "ok" and summary["violations"] == 0
    assert summary["refinement"]["passed"] is True
    assert len((out / "trace.csv").read_text().splitlines()) == 1 + 101
    # refuses to overwrite without --force
    assert main(["run", "--config", path, "--out", str(out)]) == 2
    assert "--force" in capsys.readouterr().err
    assert main(["run", "--config", path, "--out", str(out), "--force"]) == 0


def test_default_out_root(tmp_path, base_cfg, monkeypatch):
    monkeypatch.setenv("DCBACKSTEP_OUT", str(tmp_path / "root"))
    path = write_cfg(tmp_path, set_path(base_cfg, "simulation.t_end", 0.001))
    assert main(["run", "--config", path]) == 0
    assert (tmp_path / "root" / "paper-fig3" / "trace.csv").exists()


def test_run_failure_exit_and_reason(tmp_path, capsys):
    out = tmp_path / "s"
    assert main(["run", "--config", "paper-fig3-sampled", "--out", str(out)]) == 1
    err = capsys.readouterr().err
    assert "barrier_domain" in err
    summary = yaml.safe_load((out / "summary.yaml").read_text())
    assert summary["status"] == "failed" and summary["reason"] == "barrier_domain"


def test_bundled_preset_run(tmp_path):
    assert main(["run", "--config", "paper-fig3", "--out", str(tmp_path / "p")]) == 0
    assert (tmp_path / "p" / "summary.yaml").exists()


def _sweep_file(tmp_path, runs, base="paper-fig3"):
    path = tmp_path / "sweep.yaml"
    path.write_text(yaml.safe_dump({"base": base, "runs": runs}))
    return str(path)


def _aggregate(out):
    with open(out / "aggregate.csv") as fh:
        return list(csv.reader(fh))


def test_sweep_empty(tmp_path):
    out = tmp_path / "o"
    assert main(["sweep", "--config", _sweep_file(tmp_path, []), "--out", str(out)]) == 0
    assert _aggregate(out) == [AGGREGATE_COLUMNS]


def test_sweep_bad_gain_caught_before_running(tmp_path, capsys):
    runs = [{"label": "ok", "set": {"simulation.t_end": 0.002}},
            {"label": "zero-gain", "set": {"gains.gamma2": 0.0}}]
    out = tmp_path / "o"
    assert main(["sweep", "--config", _sweep_file(tmp_path, runs), "--out", str(out),
                 "--parallel", "2"]) == 1
    rows = _aggregate(out)
    assert [r[2:4] for r in rows[1:]] == [["ok", ""], ["failed", "config_error"]]
    assert not (out / "001-zero-gain").exists()
    assert "gains.gamma2" in capsys.readouterr().err


def test_sweep_p_load(tmp_path):
    # three step sizes over [0.4, 0.6) s; one aggregate row each
    out = tmp_path / "o"
    code = main(["sweep", "--config", str(Path(__file__).parents[1] / "configs" / "p-load-sweep.yaml"), "--out", str(out),
                 "--parallel", "3"])
    rows = _aggregate(out)
    assert len(rows) == 4
    assert [r[1] for r in rows[1:]] == ["P120", "P240", "P480"]
    assert code == (0 if all(r[2] == "ok" for r in rows[1:]) else 1)
