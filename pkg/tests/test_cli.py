from __future__ import annotations

import csv
import hashlib
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from hcot import cli, hgroup, validation


def _run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = cli.main([*argv, "--out", str(out)])
    return code, out


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_distance_prints_json(tmp_path, capsys):
    code, out = _run(tmp_path, "distance", "--x", "0,0,0", "--y", "0,0,1")
    assert code == 0
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    stored = json.loads((out / "result.json").read_text())
    assert printed["d"] == pytest.approx(math.sqrt(4 * math.pi), rel=1e-12)
    assert stored["d"] == printed["d"]


def test_validate_group_passes(tmp_path):
    code, out = _run(tmp_path, "validate", "--suite", "group")
    assert code == 0
    rows = list(csv.DictReader((out / "checks.csv").open()))
    assert rows and all(r["passed"] == "1" for r in rows)


def test_broken_group_law_is_named(tmp_path, monkeypatch):
    real = hgroup.compose

    def broken(a, b):
        out = np.array(real(a, b), dtype=float)
        out[..., -1] += 1e-3 * np.asarray(a, dtype=float)[..., 0]
        return out

    monkeypatch.setattr(hgroup, "compose", broken)
    code, out = _run(tmp_path, "validate", "--suite", "group")
    assert code == cli.EXIT_NUMERIC
    failed = {c["name"] for c in json.loads((out / "result.json").read_text())["checks"] if not c["passed"]}
    assert "associativity" in failed


def test_two_link_csv(tmp_path):
    code, out = _run(tmp_path, "wardrop", "--config", "bundled:two_link")
    assert code == 0
    rows = list(csv.DictReader((out / "edge_flows.csv").open()))
    assert [float(r["flow"]) for r in rows] == pytest.approx([0.5, 0.5], abs=1e-6)
    result = json.loads((out / "result.json").read_text())
    assert result["certificate"]["passed"]


def test_schema_error_exit_code(tmp_path):
    cfg = {"command": "distance", "x": [0, 0], "y": [0, 0, 1]}
    code, out = _run(tmp_path, "distance", "--config", _write(tmp_path, cfg))
    assert code == cli.EXIT_CONFIG
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "invalid_config"
    assert not (out / "result.json").exists()


def test_unreadable_config_and_mismatched_command(tmp_path):
    assert cli.main(["distance", "--config", str(tmp_path / "missing.json")]) == cli.EXIT_CONFIG
    path = _write(tmp_path, {"command": "validate"})
    assert cli.main(["distance", "--config", path, "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_stochastic_task_needs_seed(tmp_path):
    cfg = cli.bundled_scenario("mcp_ball")
    cfg.pop("seed")
    code, _ = _run(tmp_path, "geodesic", "--config", _write(tmp_path, cfg))
    assert code == cli.EXIT_CONFIG


def test_numerical_failure_exit_code(tmp_path):
    cfg = {"command": "density", "task": "transport_density",
           "mu": {"points": [[0, 0, 0]], "weights": [1.0]}, "nu": {"points": [[1, 0, 0]], "weights": [1.0]},
           "grid": {"lo": [0.4, 0.4, 0.4], "hi": [0.6, 0.6, 0.6], "shape": [2, 2, 2]}}
    code, out = _run(tmp_path, "density", "--config", _write(tmp_path, cfg))
    assert code == cli.EXIT_NUMERIC
    assert json.loads((out / "manifest.json").read_text())["status"] == "numerical_failure"


def test_reruns_are_byte_identical(tmp_path):
    outs = [_run(tmp_path, "wardrop", "--config", "bundled:two_link", name=f"r{k}")[1] for k in range(2)]
    for name in ("result.json", "edge_flows.csv", "manifest.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_manifest_hashes_outputs(tmp_path):
    _, out = _run(tmp_path, "wardrop", "--config", "bundled:two_link")
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["outputs"]) == {"result.json", "edge_flows.csv"}
    for name, digest in manifest["outputs"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    assert manifest["exit_code"] == 0 and manifest["seed"] == 0
    assert {"numpy", "scipy", "python"} <= set(manifest["versions"])


def test_output_dir_from_environment(tmp_path, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv(cli.OUT_ENV, str(target))
    assert cli.main(["distance", "--x", "0,0,0", "--y", "1,0,0"]) == 0
    assert (target / "result.json").exists()


def test_seed_flag_overrides_config(tmp_path):
    cfg = cli.bundled_scenario("mcp_ball")
    cfg["samples"] = 2000
    path = _write(tmp_path, cfg)
    _, a = _run(tmp_path, "geodesic", "--config", path, "--seed", "5", name="a")
    _, b = _run(tmp_path, "geodesic", "--config", path, "--seed", "6", name="b")
    assert json.loads((a / "manifest.json").read_text())["seed"] == 5
    assert (a / "result.json").read_text() != (b / "result.json").read_text()


@pytest.mark.parametrize("name", ["two_link", "lattice_a", "lattice_b", "lattice_c", "mcp_ball", "interp_ball"])
def test_bundled_scenarios_validate(name):
    cli.validate_config(cli.bundled_scenario(name))


def test_geodesic_path_csv(tmp_path):
    cfg = {"command": "geodesic", "x": [0, 0, 0], "y": [1, 0.5, 0.2], "samples": 5}
    code, out = _run(tmp_path, "geodesic", "--config", _write(tmp_path, cfg))
    assert code == 0
    rows = list(csv.reader((out / "geodesic.csv").open()))
    assert rows[0][0] == "t" and len(rows) == 6
    np.testing.assert_allclose([float(v) for v in rows[-1][1:]], [1, 0.5, 0.2], atol=1e-9)


def test_transport_plan_csv(tmp_path):
    cfg = {"command": "transport", "mu": {"points": [[0, 0, 0], [1, 0, 0]], "weights": [0.5, 0.5]},
           "nu": {"points": [[0, 1, 0], [1, 1, 0]], "weights": [0.5, 0.5]}}
    code, out = _run(tmp_path, "transport", "--config", _write(tmp_path, cfg))
    assert code == 0
    rows = list(csv.DictReader((out / "plan.csv").open()))
    assert sum(float(r["mass"]) for r in rows) == pytest.approx(1.0)


def test_threads_flag_gives_same_flows(tmp_path):
    _, a = _run(tmp_path, "wardrop", "--config", "bundled:two_link", "--threads", "2", name="t2")
    _, b = _run(tmp_path, "wardrop", "--config", "bundled:two_link", name="t1")
    assert (a / "edge_flows.csv").read_text() == (b / "edge_flows.csv").read_text()
    assert cli.main(["distance", "--x", "0,0,0", "--y", "1,0,0", "--threads", "0"]) == cli.EXIT_CONFIG


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "hcot.cli", "distance", "--x", "0,0,0", "--y", "0,0,4",
                          "--out", str(tmp_path / "sub")], capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["d"] == pytest.approx(4 * math.sqrt(math.pi), rel=1e-12)


def test_validation_suite_names():
    with pytest.raises(ValueError):
        validation.run_suite("nope")


def test_every_validation_check_passes():
    results = validation.run_suite("all")
    assert {r.suite for r in results} == set(validation.SUITES)
    failed = [r.name for r in results if not r.passed]
    assert not failed, failed
