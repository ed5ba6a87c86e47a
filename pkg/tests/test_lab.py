import csv
import io
import json

import numpy as np
import pytest

from eoslab.lab import (SCHEMA_VERSION, Column, ExperimentConfig, ExperimentKind, ResultTable,
                        input_hash, map_cells, pool_size, run_experiment)
from eoslab.model import ValidationError

BIFURCATION = {
    "kind": "bifurcation", "network": {"depth": 3, "dim": 1, "init_scale": 0.01},
    "target": {"singular_values": [10.0]},
    "eta_grid": {"start": 0.9, "stop": 1.6, "num": 30, "relative": True},
}

# pinned column order per kind
SCHEMAS = {
    "bifurcation": ["eta", "eta_over_threshold", "status", "period", "escape_steps"]
    + [f"tail_{k}" for k in range(1, 17)],
    "orbit_roots": ["eta", "eta_over_threshold", "status", "rho_low", "rho_high", "residual_low",
                    "residual_high", "sigma_low", "sigma_high"],
    "hessian_verify": ["rank", "family", "status", "analytic", "numerical", "abs_error", "rel_error"],
    "contour_toy": ["eta", "iteration", "status", "layer_1", "layer_2", "product", "gap", "loss"],
    "oscillation_range": ["eta", "eta_over_threshold", "status", "period", "predicted_low",
                          "predicted_high", "observed_low", "observed_high"],
    "train": ["iteration", "status", "loss", "sigma_1", "gap_1", "subspace_distance_max"],
    "diagonal_compare": ["eta", "coordinate", "status", "diag_root_low", "diag_root_high",
                         "scalar_root_low", "scalar_root_high", "root_difference",
                         "scalar_trajectory_difference", "matrix_trajectory_difference"],
    "mild_sharpening_map": ["depth", "eta", "threshold", "predicted_eos", "status", "period",
                            "final_sharpness", "escape_steps"],
    "rank_p_oscillation": ["eta", "predicted_rank", "status", "observed_rank", "amplitude_1",
                           "relative_amplitude_1"],
    "balancing_decay": ["iteration", "status", "loss", "sigma_1", "gap_1", "subspace_distance_max"],
    "svs_convergence": ["init_kind", "iteration", "status", "loss", "sigma_1", "gap_1",
                        "subspace_distance_max"],
}

SMALL = {
    "bifurcation": BIFURCATION,
    "orbit_roots": {**BIFURCATION, "kind": "orbit_roots"},
    "oscillation_range": {**BIFURCATION, "kind": "oscillation_range", "max_iters": 2000},
    "hessian_verify": {"kind": "hessian_verify", "network": {"depth": 2, "dim": 2, "init_scale": 0.01},
                       "target": {"singular_values": [5.0]}},
    "contour_toy": {"kind": "contour_toy", "network": {"depth": 2, "dim": 1},
                    "target": {"singular_values": [5.0]}, "eta_grid": [0.18, 0.201],
                    "max_iters": 200, "record_every": 50},
    "train": {"kind": "train", "network": {"depth": 2, "dim": 2, "init_scale": 0.1},
              "target": {"singular_values": [1.0]}, "eta": 0.1, "max_iters": 20},
    "balancing_decay": {"kind": "balancing_decay", "network": {"depth": 2, "dim": 2, "init_scale": 0.1},
                        "target": {"singular_values": [1.0]}, "eta": 0.1, "max_iters": 20},
    "svs_convergence": {"kind": "svs_convergence", "network": {"depth": 2, "dim": 2},
                        "target": {"singular_values": [1.0], "factor_kind": "random_orthogonal"},
                        "eta": 0.1, "max_iters": 20, "init_kinds": ["orthogonal_zero_top"]},
    "diagonal_compare": {"kind": "diagonal_compare", "network": {"depth": 3, "dim": 2},
                         "target": {"singular_values": [10.0, 9.0]}, "eta_grid": [0.032],
                         "max_iters": 300},
    "mild_sharpening_map": {"kind": "mild_sharpening_map", "network": {"depth": 2, "dim": 1},
                            "target": {"singular_values": [0.5]}, "eta_grid": [1.0, 2.2],
                            "depths": [2, 3], "max_iters": 2000},
    "rank_p_oscillation": {"kind": "rank_p_oscillation", "network": {"depth": 3, "dim": 3},
                           "target": {"singular_values": [10.0]}, "eta_grid": [0.032],
                           "max_iters": 500},
}


def test_every_kind_has_a_schema_fixture():
    assert set(SCHEMAS) == {k.value for k in ExperimentKind}


@pytest.mark.parametrize("kind", sorted(SCHEMAS))
def test_golden_schema(kind):
    table = run_experiment(ExperimentConfig.from_dict(SMALL[kind]))
    assert table.names[:len(SCHEMAS[kind])] == SCHEMAS[kind]
    assert table.rows
    for row in table.rows:
        assert len(row) == len(table.columns)
        for c, v in zip(table.columns, row):
            if v is not None and c.kind == "float":
                assert np.isfinite(v)


def test_bifurcation_periods_and_determinism(tmp_path):
    cfg = ExperimentConfig.from_dict({**BIFURCATION, "out": str(tmp_path / "a")})
    t1 = run_experiment(cfg)
    periods = t1.column("period")
    assert periods[0] == 1 and 2 in periods
    run_experiment(ExperimentConfig.from_dict({**BIFURCATION, "out": str(tmp_path / "b")}))
    a = (tmp_path / "a" / "bifurcation.csv").read_bytes()
    assert a == (tmp_path / "b" / "bifurcation.csv").read_bytes()
    assert b"\r" not in a
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["schema_version"] == SCHEMA_VERSION
    assert manifest["input_hash"] == input_hash(cfg)
    assert {"config", "started_at", "duration_seconds"} <= set(manifest)


def test_csv_round_trips_floats():
    t = ResultTable("x", (Column("a"), Column("s", kind="label")))
    t.add(a=0.1 + 0.2, s="ok")
    t.add(s="diverged")
    rows = list(csv.reader(io.StringIO(t.to_csv())))
    assert rows[0] == ["a", "s"]
    assert float(rows[1][0]) == 0.1 + 0.2
    assert rows[2] == ["", "diverged"]


def test_table_rejects_nonfinite_and_unknown():
    t = ResultTable("x", (Column("a"),))
    with pytest.raises(ValueError):
        t.add(a=float("nan"))
    with pytest.raises(KeyError):
        t.add(b=1.0)


def test_divergence_is_labelled_not_fatal():
    cfg = ExperimentConfig.from_dict({**BIFURCATION, "eta_grid": [0.5, 1.0]})
    rows = run_experiment(cfg).records()
    assert [r["status"] for r in rows] == ["diverged", "diverged"]
    assert all(r["tail_1"] is None for r in rows)


def test_input_hash_is_git_blob_sha1():
    import hashlib
    cfg = ExperimentConfig.from_dict(BIFURCATION)
    body = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    assert input_hash(cfg) == hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()
    other = ExperimentConfig.from_dict({**BIFURCATION, "seed": 3})
    assert input_hash(other) != input_hash(cfg)


@pytest.mark.parametrize("patch, field", [
    ({"eta_grid": None}, "eta_grid"),
    ({"eta_grid": [0.2, 0.1]}, "eta_grid"),
    ({"eta_grid": [0.1, float("inf")]}, "eta_grid"),
    ({"eta_grid": {"start": 0.1, "stop": 0.2, "num": 20_000}}, "eta_grid.num"),
    ({"eta_grid": {"start": 0.1, "stop": 0.2}}, "eta_grid.num"),
    ({"kind": "nope"}, "kind"),
    ({"bogus": 1}, "bogus"),
    ({"target": {"singular_values": [1.0, 2.0]}}, "target.singular_values"),
    ({"network": {"depth": 1, "dim": 1}}, "network.depth"),
    ({"network": {"depth": 2, "dim": 1, "init_kind": "weird"}}, "network.init_kind"),
    ({"schema_version": 2}, "schema_version"),
    ({"max_iters": 0}, "max_iters"),
])
def test_validation_names_the_field(patch, field):
    data = {**BIFURCATION, **patch}
    data = {k: v for k, v in data.items() if v is not None}
    with pytest.raises(ValidationError, match=field.replace(".", r"\.")):
        ExperimentConfig.from_dict(data)


def test_load_reports_path(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ValidationError, match="bad.json"):
        ExperimentConfig.load(bad)
    with pytest.raises(ValidationError, match="missing.json"):
        ExperimentConfig.load(tmp_path / "missing.json")


def test_to_dict_round_trip():
    cfg = ExperimentConfig.from_dict({**SMALL["svs_convergence"], "seed": 5})
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_unwritable_output_names_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    cfg = ExperimentConfig.from_dict({**SMALL["orbit_roots"], "out": str(blocker / "sub")})
    with pytest.raises(OSError, match="file"):
        run_experiment(cfg)


def _square(x):
    return x * x


def test_map_cells_keeps_order(monkeypatch):
    monkeypatch.setenv("EOSLAB_THREADS", "2")
    assert pool_size() == 2
    assert map_cells(_square, list(range(7))) == [x * x for x in range(7)]
    monkeypatch.setenv("EOSLAB_THREADS", "1")
    assert map_cells(_square, [3]) == [9]
    monkeypatch.setenv("EOSLAB_THREADS", "x")
    with pytest.raises(ValidationError):
        pool_size()


def test_parallel_matches_serial(monkeypatch):
    cfg = ExperimentConfig.from_dict({**BIFURCATION, "eta_grid": {"start": 0.95, "stop": 1.3,
                                                                  "num": 6, "relative": True}})
    monkeypatch.setenv("EOSLAB_THREADS", "1")
    serial = run_experiment(cfg).to_csv()
    monkeypatch.setenv("EOSLAB_THREADS", "3")
    assert run_experiment(cfg).to_csv() == serial


def test_hessian_verify_example():
    rows = run_experiment(ExperimentConfig.from_dict(SMALL["hessian_verify"])).records()
    matched = [r for r in rows if r["status"] == "match"]
    assert matched and max(r["rel_error"] for r in matched) < 1e-4
    assert not [r for r in rows if r["status"] == "mismatch"]


def test_contour_toy_example():
    cfg = ExperimentConfig.from_dict({**SMALL["contour_toy"], "eta_grid": [0.18, 0.1997, 0.201],
                                      "max_iters": 5000, "record_every": 5000})
    final = {r["eta"]: r for r in run_experiment(cfg).records() if r["iteration"] == 5000}
    assert final[0.18]["gap"] > 0.1 * 2.8125 and final[0.18]["loss"] < 1e-20
    assert final[0.201]["gap"] < 1e-8 * 2.8125
    assert final[0.1997]["loss"] < 1e-6
