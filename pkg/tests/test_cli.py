"""Command-line interface: configs, exit codes, outputs, determinism."""

import json
import os

import pytest

from anthractl.cli import (
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_OK,
    bundled_scenarios,
    main,
    parse_config,
    resolve_config_path,
)

_BUNDLED = ("fig1", "fig2", "fig3", "fig4", "forecast-demo",
            "pde-1d-demo", "riccati-scalar", "sweep-1d")


def _write_cfg(tmp_path, data, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def _tiny_ode(mode="simulate-ode", **over):
    data = {
        "name": f"tiny-{mode}",
        "mode": mode,
        "host": {
            "theta1": 0.6,
            "alpha": {"kind": "seasonal", "a": 4.0, "b": 0.75, "c": 0.2},
        },
        "initial": {"theta": 0.2, "v": 0.5, "v_r": 0.0},
        "control": {"u": 0.3},
        "cost": {"k": 1.0},
        "time": {"T": 0.5, "dt": 0.005},
    }
    data.update(over)
    return data


def _tiny_pde():
    return {
        "name": "tiny-pde",
        "mode": "simulate-pde",
        "grid": {"extents": [1.0], "resolution": [8], "diffusion": 0.02},
        "theta1": 0.6,
        "alpha": {"kind": "constant", "value": 1.5},
        "initial": {"theta": 0.2},
        "control": {"u": 0.25},
        "cost": {"k1": 1.0, "k2": 0.0},
        "time": {"T": 0.5, "dt": 0.01},
        "store_every": 10,
    }


def _tiny_riccati():
    return {
        "name": "tiny-riccati",
        "mode": "riccati-pde",
        "grid": {"extents": [1.0], "resolution": [1], "diffusion": 1.0},
        "theta1": 0.5,
        "alpha": {"kind": "constant", "value": 1.0},
        "initial": {"theta": 0.3},
        "linearization": {"epsilon": 4.0},
        "cost": {"k1": 0.5, "k2": 0.5},
        "time": {"T": 0.5, "dt": 0.01},
    }


def _tiny_sweep():
    return {
        "name": "tiny-sweep",
        "mode": "sweep-pde",
        "grid": {"extents": [1.0], "resolution": [4], "diffusion": 0.01},
        "theta1": 0.6,
        "alpha": {"kind": "constant", "value": 2.0},
        "initial": {"theta": 0.2},
        "cost": {"k1": 1.0, "k2": 0.25},
        "time": {"T": 0.5, "dt": 0.02},
        "sweep": {"relax": 0.5, "max_iter": 60},
    }


# ---------------------------------------------------------------------------
#  config resolution and validation
# ---------------------------------------------------------------------------

def test_bundled_scenarios_complete():
    assert tuple(sorted(bundled_scenarios())) == _BUNDLED


def test_resolve_prefers_existing_file(tmp_path):
    path = _write_cfg(tmp_path, _tiny_ode())
    assert resolve_config_path(path) == path
    assert resolve_config_path("fig1").endswith(os.path.join("scenarios", "fig1.json"))
    with pytest.raises(FileNotFoundError, match="bundled"):
        resolve_config_path("no-such-scenario")


def test_parse_config_fills_name_from_filename(tmp_path):
    data = _tiny_ode()
    del data["name"]
    cfg = parse_config(_write_cfg(tmp_path, data, "my-run.json"))
    assert cfg.name == "my-run"
    assert cfg.mode == "simulate-ode"
    assert cfg.seed == 0


def test_list_scenarios_prints_all(capsys):
    assert main(["list-scenarios"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in _BUNDLED:
        assert name in out


def test_validate_bundled(capsys):
    assert main(["validate", "fig2"]) == EXIT_OK
    assert "OK: fig2 (simulate-ode)" in capsys.readouterr().out


def test_validate_all_bundled_scenarios():
    for name in _BUNDLED:
        assert main(["validate", name]) == EXIT_OK


# ---------------------------------------------------------------------------
#  exit codes
# ---------------------------------------------------------------------------

def test_exit_code_unknown_mode(tmp_path, capsys):
    path = _write_cfg(tmp_path, {"mode": "warp-drive"})
    assert main(["validate", path]) == EXIT_CONFIG
    assert "mode" in capsys.readouterr().err


def test_exit_code_missing_key(tmp_path, capsys):
    data = _tiny_ode()
    del data["host"]["alpha"]
    assert main(["validate", _write_cfg(tmp_path, data)]) == EXIT_CONFIG
    assert "alpha" in capsys.readouterr().err


def test_exit_code_bad_number(tmp_path, capsys):
    data = _tiny_ode()
    data["time"]["dt"] = "fast"
    assert main(["validate", _write_cfg(tmp_path, data)]) == EXIT_CONFIG
    assert "dt" in capsys.readouterr().err


def test_exit_code_malformed_json(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["validate", str(path)]) == EXIT_CONFIG
    assert "JSON" in capsys.readouterr().err


def test_exit_code_top_level_not_object(tmp_path):
    path = tmp_path / "arr.json"
    path.write_text("[1, 2, 3]")
    assert main(["validate", str(path)]) == EXIT_CONFIG


def test_exit_code_missing_file(capsys):
    assert main(["validate", "/no/such/config.json"]) == EXIT_IO
    assert "i/o error" in capsys.readouterr().err


# ---------------------------------------------------------------------------
#  running scenarios
# ---------------------------------------------------------------------------

def _run(tmp_path, data, *extra):
    path = _write_cfg(tmp_path, data, f"{data['name']}.json")
    out = tmp_path / "out"
    code = main(["run", path, "--out", str(out), *extra])
    return code, out / data["name"]


def _report(run_dir):
    with open(run_dir / "report.json", "r", encoding="utf-8") as fh:
        return json.load(fh)


def _check_manifest(run_dir, expected_outputs):
    rep = _report(run_dir)
    assert sorted(rep["outputs"]) == sorted(expected_outputs)
    on_disk = sorted(p.name for p in run_dir.iterdir())
    assert on_disk == sorted(rep["outputs"])
    for key in ("controlled", "u_zero", "u_one", "controlled_is_best"):
        assert key in rep["costs"]
    return rep


def test_run_simulate_ode(tmp_path, capsys):
    code, run_dir = _run(tmp_path, _tiny_ode())
    assert code == EXIT_OK
    rep = _check_manifest(run_dir,
                          ["ode_series.csv", "cost_comparison.csv", "report.json"])
    assert rep["mode"] == "simulate-ode"
    assert 0.0 < rep["diagnostics"]["theta_T"] < 1.0
    header = (run_dir / "ode_series.csv").read_text().splitlines()[0]
    assert header == "t,theta,v,v_r,u"
    out = capsys.readouterr().out
    assert "tiny-simulate-ode [simulate-ode]" in out
    assert "cost controlled=" in out


def test_run_optimize_ode(tmp_path):
    data = _tiny_ode(mode="optimize-ode", time={"T": 1.0, "dt": 0.005},
                     shooting={"tol": 1e-8})
    del data["control"]
    code, run_dir = _run(tmp_path, data)
    assert code == EXIT_OK
    rep = _check_manifest(run_dir,
                          ["ode_series.csv", "cost_comparison.csv", "report.json"])
    assert rep["costs"]["controlled_is_best"] is True
    assert abs(rep["diagnostics"]["shooting_residual"]) < 1e-8
    header = (run_dir / "ode_series.csv").read_text().splitlines()[0]
    assert header == "t,theta,v,v_r,u,p"


def test_run_simulate_pde(tmp_path):
    code, run_dir = _run(tmp_path, _tiny_pde())
    assert code == EXIT_OK
    rep = _check_manifest(run_dir,
                          ["pde_snapshots.csv", "cost_comparison.csv", "report.json"])
    header = (run_dir / "pde_snapshots.csv").read_text().splitlines()[0]
    assert header == "t,cell,x,theta"
    assert rep["diagnostics"]["theta_final_max"] <= 1.0


def test_run_riccati_pde(tmp_path):
    code, run_dir = _run(tmp_path, _tiny_riccati())
    assert code == EXIT_OK
    rep = _check_manifest(run_dir,
                          ["theta_path.csv", "u_path.csv", "riccati_diagnostics.csv",
                           "cost_comparison.csv", "report.json"])
    assert rep["costs"]["controlled_is_best"] is True
    assert rep["diagnostics"]["P_final_eig_min"] >= 0.0


def test_run_sweep_pde(tmp_path):
    code, run_dir = _run(tmp_path, _tiny_sweep())
    assert code == EXIT_OK
    rep = _check_manifest(run_dir,
                          ["u_path.csv", "theta_path.csv", "adjoint_path.csv",
                           "cost_history.csv", "cost_comparison.csv", "report.json"])
    assert rep["diagnostics"]["converged"] is True
    assert rep["costs"]["controlled_is_best"] is True


def test_run_forecast_with_relative_weather(tmp_path):
    (tmp_path / "wx.csv").write_text(
        "t,T,W,H\n0.0,18.0,2.0,80.0\n0.5,24.0,5.0,85.0\n1.0,21.0,3.0,90.0\n")
    data = {
        "name": "tiny-forecast",
        "mode": "forecast",
        "weather": "wx.csv",   # resolved relative to the config file
        "severity": {"model": "asi",
                     "coefficients": {"a0": 0.1, "a01": 0.05, "a10": 0.01}},
        "host": {"theta1": 0.6},
        "initial": {"theta": 0.2, "v": 0.5, "v_r": 0.0},
        "control": {"u": 0.2},
        "cost": {"k": 1.0},
        "time": {"T": 0.5, "dt": 0.005},
    }
    code, run_dir = _run(tmp_path, data)
    assert code == EXIT_OK
    rep = _check_manifest(run_dir,
                          ["forecast_series.csv", "ode_series.csv",
                           "cost_comparison.csv", "report.json"])
    assert rep["diagnostics"]["severity_model"] == "asi"
    assert rep["diagnostics"]["alpha_max"] > 0.0


def test_seed_override_is_echoed(tmp_path):
    code, run_dir = _run(tmp_path, _tiny_ode(), "--seed", "7")
    assert code == EXIT_OK
    assert _report(run_dir)["seed"] == 7


def test_repeat_runs_byte_identical(tmp_path):
    data = _tiny_ode()
    path = _write_cfg(tmp_path, data)
    outs = []
    for sub in ("a", "b"):
        assert main(["run", path, "--out", str(tmp_path / sub)]) == EXIT_OK
        outs.append(tmp_path / sub / data["name"])
    files = sorted(p.name for p in outs[0].iterdir())
    assert files == sorted(p.name for p in outs[1].iterdir())
    for fn in files:
        assert (outs[0] / fn).read_bytes() == (outs[1] / fn).read_bytes()


# ---------------------------------------------------------------------------
#  output directory precedence
# ---------------------------------------------------------------------------

def test_out_dir_precedence(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("ANTHRACTL_OUT_DIR", raising=False)
    data = _tiny_ode()
    cfg_plain = _write_cfg(tmp_path, data, "plain.json")
    data_hint = dict(data, name="tiny-hint", out_dir=str(tmp_path / "from-config"))
    cfg_hint = _write_cfg(tmp_path, data_hint, "hinted.json")

    # 1) --out beats the config hint
    assert main(["run", cfg_hint, "--out", str(tmp_path / "cli-out")]) == EXIT_OK
    assert (tmp_path / "cli-out" / "tiny-hint").is_dir()
    assert not (tmp_path / "from-config").exists()

    # 2) config hint beats the environment
    monkeypatch.setenv("ANTHRACTL_OUT_DIR", str(tmp_path / "env-out"))
    assert main(["run", cfg_hint]) == EXIT_OK
    assert (tmp_path / "from-config" / "tiny-hint").is_dir()
    assert not (tmp_path / "env-out").exists()

    # 3) environment beats the default
    assert main(["run", cfg_plain]) == EXIT_OK
    assert (tmp_path / "env-out" / data["name"]).is_dir()

    # 4) default is ./anthractl-out
    monkeypatch.delenv("ANTHRACTL_OUT_DIR")
    assert main(["run", cfg_plain]) == EXIT_OK
    assert (tmp_path / "anthractl-out" / data["name"]).is_dir()


# ---------------------------------------------------------------------------
#  batch
# ---------------------------------------------------------------------------

def test_batch_runs_scenarios_in_parallel(tmp_path, capsys):
    a = _write_cfg(tmp_path, _tiny_ode(), "a.json")
    b = _write_cfg(tmp_path, dict(_tiny_pde(), name="tiny-pde-b"), "b.json")
    code = main(["batch", a, b, "--out", str(tmp_path / "out"), "--jobs", "2"])
    assert code == EXIT_OK
    assert (tmp_path / "out" / "tiny-simulate-ode" / "report.json").exists()
    assert (tmp_path / "out" / "tiny-pde-b" / "report.json").exists()
    out = capsys.readouterr().out
    assert "tiny-simulate-ode" in out and "tiny-pde-b" in out


def test_batch_rejects_duplicate_names(tmp_path, capsys):
    a = _write_cfg(tmp_path, _tiny_ode(), "a.json")
    b = _write_cfg(tmp_path, _tiny_ode(), "b.json")  # same scenario name
    assert main(["batch", a, b, "--out", str(tmp_path / "out")]) == EXIT_CONFIG
    assert "distinct names" in capsys.readouterr().err


def test_batch_missing_config_is_io_error(tmp_path):
    a = _write_cfg(tmp_path, _tiny_ode(), "a.json")
    assert main(["batch", a, "/no/such.json",
                 "--out", str(tmp_path / "out")]) == EXIT_IO
