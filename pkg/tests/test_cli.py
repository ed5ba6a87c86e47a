import json
import subprocess
import sys

import pytest

from eoslab.cli import main


def test_orbit_prints_roots(capsys):
    assert main(["orbit", "--depth", "3", "--sigma", "10", "--eta", "0.032"]) == 0
    out = capsys.readouterr().out
    assert "rho_low=2.03690567967" in out and "residual_high=" in out


def test_orbit_below_threshold(capsys):
    assert main(["orbit", "--depth", "3", "--sigma", "10", "--eta", "0.02"]) == 0
    assert "no two-period orbit" in capsys.readouterr().out


def test_orbit_missing_flag(capsys):
    assert main(["orbit", "--depth", "3", "--eta", "0.02"]) == 1
    assert "sigma" in capsys.readouterr().err


def test_sweep_missing_grid_names_field(tmp_path, capsys):
    cfg = tmp_path / "bifurcation.json"
    cfg.write_text(json.dumps({"kind": "bifurcation", "network": {"depth": 3, "dim": 1},
                               "target": {"singular_values": [10]}}))
    assert main(["sweep", "--config", str(cfg)]) == 1
    assert "eta_grid" in capsys.readouterr().err


def test_sweep_writes_outputs(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "orbit_roots", "network": {"depth": 3, "dim": 1},
                               "target": {"singular_values": [10]}, "eta_grid": [0.032, 0.034]}))
    out = tmp_path / "out"
    assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "orbit_roots.csv").exists() and (out / "manifest.json").exists()


def test_unknown_flag_exits_one(capsys):
    assert main(["train", "--bogus"]) == 1
    assert "bogus" in capsys.readouterr().err


def test_train_and_hessian(capsys):
    assert main(["train", "--depth", "2", "--dim", "2", "--sigma", "1", "--eta", "0.1",
                 "--iters", "5"]) == 0
    assert capsys.readouterr().out.startswith("iteration,status,loss")
    assert main(["hessian", "--depth", "2", "--dim", "2", "--sigma", "5", "--alpha", "0.01"]) == 0


def test_config_flag_overrides(tmp_path, capsys):
    cfg = tmp_path / "t.json"
    cfg.write_text(json.dumps({"kind": "train", "network": {"depth": 2, "dim": 2},
                               "target": {"singular_values": [1.0]}, "eta": 0.1, "max_iters": 3}))
    assert main(["train", "--config", str(cfg), "--depth", "3", "--eta", "0.05", "--seed", "1",
                 "--out", str(tmp_path / "o")]) == 0
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["config"]["network"]["depth"] == 3 and manifest["config"]["eta"] == 0.05


def test_wrong_kind_for_subcommand(tmp_path, capsys):
    cfg = tmp_path / "t.json"
    cfg.write_text(json.dumps({"kind": "bifurcation", "network": {"depth": 2, "dim": 1},
                               "target": {"singular_values": [1.0]}, "eta_grid": [0.1]}))
    assert main(["train", "--config", str(cfg)]) == 1
    assert "kind" in capsys.readouterr().err


def test_help_lists_config_fields():
    res = subprocess.run([sys.executable, "-m", "eoslab", "sweep", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0
    for field in ("eta_grid", "network.init_kind", "target.factor_kind", "max_iters", "out"):
        assert field in res.stdout


def test_verify_exit_codes(monkeypatch, capsys):
    import eoslab.acceptance as acc
    monkeypatch.setitem(acc.SUITES, "ok", (8,))
    monkeypatch.setitem(acc.SUITES, "bad", (8,))
    assert main(["verify", "--suite", "ok"]) == 0
    monkeypatch.setitem(acc.CRITERIA, 8, ("forced", lambda: (False, "forced failure")))
    assert main(["verify", "--suite", "bad"]) == 2
    assert "[FAIL]" in capsys.readouterr().out
