"""Config validation, task orchestration, report emission, CLI exit codes."""

import csv
import json
import os

import numpy as np
import pytest

from fracbundle.cli import main
from fracbundle.config import parse_config
from fracbundle.errors import ConfigError
from fracbundle.runner import emit_report, run_experiment

BASE_CONFIG = {
    "manifold": {"kind": "cycle", "count": 16, "length": float(2 * np.pi)},
    "bundle": {"rank": 1, "connection": "trivial", "potential": "zero", "seed": 11},
    "region": {"type": "arc", "start": 0, "count": 6},
    "orders": [0.3, 0.5, 0.7],
    "time": {"horizon": 4.5, "steps": 512},
    "tasks": ["verify_spectral", "verify_blago"],
    "seed": 99,
    "options": {"blago_pairs": 12},
}


def write_config(tmp_path, overrides=None, **replace):
    raw = json.loads(json.dumps(BASE_CONFIG))
    raw.update(replace)
    if overrides:
        for key, val in overrides.items():
            raw[key] = val
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw))
    return str(path)


# -- validation ----------------------------------------------------------------

def test_config_rejects_bad_horizon():
    raw = json.loads(json.dumps(BASE_CONFIG))
    raw["time"]["horizon"] = -1.0
    with pytest.raises(ConfigError) as err:
        parse_config(raw)
    assert "time.horizon" in str(err.value)


def test_config_rejects_odd_steps_and_empty_tasks():
    raw = json.loads(json.dumps(BASE_CONFIG))
    raw["time"]["steps"] = 511
    with pytest.raises(ConfigError):
        parse_config(raw)
    raw = json.loads(json.dumps(BASE_CONFIG))
    raw["tasks"] = []
    with pytest.raises(ConfigError):
        parse_config(raw)
    raw = json.loads(json.dumps(BASE_CONFIG))
    raw["tasks"] = ["verify_spectral", "verify_spectral"]
    with pytest.raises(ConfigError):
        parse_config(raw)


def test_config_rejects_unknown_task_and_order():
    raw = json.loads(json.dumps(BASE_CONFIG))
    raw["tasks"] = ["explode"]
    with pytest.raises(ConfigError):
        parse_config(raw)
    raw = json.loads(json.dumps(BASE_CONFIG))
    raw["orders"] = [1.5]
    with pytest.raises(ConfigError):
        parse_config(raw)


# -- runner ---------------------------------------------------------------------

def test_run_experiment_passes_and_is_deterministic():
    cfg = parse_config(BASE_CONFIG)
    rep1 = run_experiment(cfg)
    rep2 = run_experiment(cfg)
    assert rep1.passed and rep2.passed
    for t1, t2 in zip(rep1.tasks, rep2.tasks):
        assert t1.measures == t2.measures  # bit-identical reruns


def test_run_experiment_tolerance_failure_is_data():
    raw = json.loads(json.dumps(BASE_CONFIG))
    raw["tasks"] = ["verify_spectral"]
    raw["tolerances"] = {"fractional_round_trip": 1e-30}
    rep = run_experiment(parse_config(raw))
    task = rep.tasks[0]
    assert task.status == "fail"
    assert task.measures["fractional_round_trip"] > 1e-30  # measured value recorded
    assert not rep.passed


def test_config_echo_reruns_exactly(tmp_path):
    cfg = parse_config(BASE_CONFIG)
    rep = run_experiment(cfg)
    echo = rep.to_payload()["config"]
    rep2 = run_experiment(parse_config(echo))
    for t1, t2 in zip(rep.tasks, rep2.tasks):
        assert t1.measures == t2.measures


def test_report_round_trip_and_tables(tmp_path):
    cfg = parse_config(BASE_CONFIG)
    rep = run_experiment(cfg)
    paths = emit_report(rep, str(tmp_path))
    payload = json.loads((tmp_path / "report.json").read_text())
    assert payload == rep.to_payload()
    assert payload["config"]["seed"] == 99
    names = {t["name"] for t in payload["tasks"]}
    assert names == set(cfg.tasks)
    spectrum = tmp_path / "verify_spectral__spectrum.csv"
    assert spectrum.exists()
    with open(spectrum) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["index", "eigenvalue"]
    assert len(rows) - 1 == 16  # V * r eigenvalues
    assert set(map(os.path.basename, paths)) >= {"report.json"}


# -- CLI ------------------------------------------------------------------------

def test_cli_pass_exit_code(tmp_path, capsys):
    cfg_path = write_config(tmp_path)
    code = main(["run", cfg_path, "--out", str(tmp_path / "out")])
    assert code == 0
    out = capsys.readouterr().out
    assert "overall: pass" in out
    assert (tmp_path / "out" / "report.json").exists()


def test_cli_config_error_exit_code(tmp_path, capsys):
    raw = json.loads(json.dumps(BASE_CONFIG))
    raw["time"]["horizon"] = 0.0
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(raw))
    code = main(["run", str(path), "--out", str(tmp_path / "out")])
    assert code == 2
    assert "config error" in capsys.readouterr().err


def test_cli_missing_file_exit_code(tmp_path, capsys):
    code = main(["run", str(tmp_path / "nope.json")])
    assert code == 2


def test_cli_tolerance_failure_exit_code(tmp_path, capsys):
    cfg_path = write_config(
        tmp_path,
        tasks=["verify_spectral"],
        tolerances={"fractional_round_trip": 1e-30},
    )
    code = main(["run", cfg_path, "--out", str(tmp_path / "out")])
    assert code == 1
    assert "overall: fail" in capsys.readouterr().out


def test_cli_env_var_output_dir(tmp_path, monkeypatch):
    cfg_path = write_config(tmp_path, tasks=["verify_spectral"])
    monkeypatch.setenv("FRACBUNDLE_OUT", str(tmp_path / "envout"))
    code = main(["run", cfg_path])
    assert code == 0
    assert (tmp_path / "envout" / "report.json").exists()


def test_cli_seed_override_changes_echo(tmp_path):
    cfg_path = write_config(tmp_path, tasks=["verify_spectral"])
    main(["run", cfg_path, "--out", str(tmp_path / "a"), "--seed-override", "123"])
    payload = json.loads((tmp_path / "a" / "report.json").read_text())
    assert payload["seed"] == 123
    assert payload["config"]["seed"] == 123  # echo suffices to re-run exactly


def test_time_series_export_shape():
    from fracbundle.manifold import build_manifold
    from fracbundle.bundle import build_bundle
    from fracbundle.operator import assemble
    from fracbundle.propagators import TimeGrid, TimeSection, duhamel_solve
    from fracbundle.runner import time_series_table

    m = build_manifold({"kind": "cycle", "count": 8, "length": 8.0})
    op = assemble(build_bundle(m, 1))
    grid = TimeGrid(1.0, 16)
    vals = np.zeros((len(grid), 8, 1), dtype=complex)
    vals[:, 0, 0] = np.sin(np.pi * grid.times)
    w = duhamel_solve(op, TimeSection(grid, vals))
    header, rows = time_series_table(w, [0, 3])
    assert header == ["t", "v0_re", "v3_re", "v0_im", "v3_im"]
    assert len(rows) == len(grid)


def test_operator_matrix_export_round_trip():
    from fracbundle.manifold import build_manifold
    from fracbundle.bundle import build_bundle
    from fracbundle.operator import assemble
    from fracbundle.serialize import complex_from_list, dumps, loads, operator_matrix_payload

    m = build_manifold({"kind": "cycle", "count": 6, "length": 6.0})
    op = assemble(build_bundle(m, 2, connection="random", seed=3))
    payload = loads(dumps(operator_matrix_payload(op)))
    mat = complex_from_list(payload["matrix"], (op.dim, op.dim))
    assert np.array_equal(mat, op.matrix)
