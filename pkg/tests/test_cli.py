import csv
import json

import numpy as np
import pytest

from ekflab.cli import config_digest, main, parse_grid, sweep_point, UsageError
from ekflab.scenarios import get_scenario


@pytest.fixture
def out(tmp_path, monkeypatch):
    monkeypatch.setenv("EKFLAB_OUTPUT_DIR", str(tmp_path))
    return tmp_path


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_run_kd_diverge(out):
    assert main(["run", "kd-diverge"]) == 0
    rows = read_csv(out / "kd-diverge" / "trajectory.csv")
    assert max(float(r["xhat_1"]) for r in rows) <= -0.5
    manifest = json.loads((out / "kd-diverge" / "manifest.json").read_text())
    assert manifest["verdict"] == "diverged"
    assert manifest["config_digest"] == config_digest(get_scenario("kd-diverge"))


def test_forced_mismatch(out):
    assert main(["run", "kd-diverge", "--expect", "converge"]) == 1


def test_sine_chain_negative_rate(out):
    assert main(["run", "sine-chain-small-error"]) == 0
    diag = json.loads((out / "sine-chain-small-error" / "diagnostics.json").read_text())
    assert diag["decay_rate"] < 0


def test_header_stable(out):
    main(["run", "linear", "--t-end", "1"])
    header = (out / "linear-a2-positive" / "trajectory.csv").read_text().splitlines()[0]
    assert header == "t,x_1,x_2,xhat_1,xhat_2,y_1,err,V,eigmin_P,eigmax_P"


def test_rerun_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "sine-chain", "--output-dir", str(a)]) == 0
    assert main(["run", "sine-chain", "--output-dir", str(b)]) == 0
    name = "sine-chain-small-error"
    assert (a / name / "trajectory.csv").read_bytes() == (b / name / "trajectory.csv").read_bytes()
    ma = json.loads((a / name / "manifest.json").read_text())
    mb = json.loads((b / name / "manifest.json").read_text())
    assert ma["config_digest"] == mb["config_digest"]


def test_json_format(out):
    assert main(["run", "kd-exact", "--format", "json", "--t-end", "1"]) == 0
    data = json.loads((out / "kd-exact" / "trajectory.json").read_text())
    assert data["times"][0] == 0.0


def test_config_file(out, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"scenario": "kd-diverge", "xhat0": [0.9], "expected": "converge"}))
    assert main(["run", "--config", str(cfg)]) == 0


@pytest.mark.parametrize("argv", [
    ["run", "no-such-scenario"],
    ["run", "kd", "--config", "/nonexistent.json"],
    ["run", "kd", "--dt", "-1"],
    ["sweep", "kd", "--param", "xhat0", "--grid", ""],
    ["sweep", "kd", "--param", "xhat0", "--grid", "a,b"],
    ["sweep", "kd", "--param", "theta", "--grid", "1"],
    ["gramian", "--blocks", "2", "--theta", "0"],
    ["gramian", "--blocks", "x", "--theta", "1"],
    ["validate", "krener-duarte"],
    ["bogus"],
])
def test_error_exit_codes(out, argv):
    assert main(argv) == 2


def test_sweep_kd(out, capsys):
    grid = "-1.5,-0.75,-0.5,0,0.5,0.9"
    assert main(["sweep", "kd", "--param", "xhat0", f"--grid={grid}", "--workers", "1"]) == 0
    rows = read_csv(out / "kd-diverge-sweep-xhat0" / "summary.csv")
    assert [r["verdict"] for r in rows] == ["diverged"] * 4 + ["converged"] * 2
    assert list(rows[0]) == ["xhat0", "verdict", "final_error", "decay_rate"]


def test_sweep_dt_sine_chain(out):
    assert main(["sweep", "sine-chain", "--param", "dt", "--grid", "1e-2,1e-3,1e-4", "--workers", "1"]) == 0
    rows = read_csv(out / "sine-chain-small-error-sweep-dt" / "summary.csv")
    assert len({r["verdict"] for r in rows}) == 1 and rows[0]["verdict"] == "converged"


def test_sweep_theta_sets_initial_covariance():
    c = sweep_point(get_scenario("sine-chain"), "theta", 2.0)
    assert np.allclose(c.P0, [[4, 4], [4, 8]])
    assert c.expected == "none"


def test_sweep_dt_keeps_sample_interval():
    c = sweep_point(get_scenario("sine-chain"), "dt", 1e-4)
    assert c.integrator.dt * c.integrator.sample_stride == pytest.approx(1e-2)


def test_parse_grid():
    assert parse_grid("1, 2,3") == [1.0, 2.0, 3.0]
    with pytest.raises(UsageError):
        parse_grid(" , ")


def test_gramian_text(capsys):
    assert main(["gramian", "--blocks", "2", "--theta", "1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    k = lines.index("S(theta) =")
    assert [ln.split() for ln in lines[k + 1:k + 3]] == [["1", "-1"], ["-1", "2"]]


def test_gramian_json(capsys):
    assert main(["gramian", "--blocks", "2,3", "--theta", "10", "--format", "json"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["residuals"]["lyapunov"] <= 1e-9 and d["residuals"]["riccati"] <= 1e-9


def test_diagnose_roundtrip(out, tmp_path, capsys):
    main(["run", "kd-diverge"])
    capsys.readouterr()
    dest = tmp_path / "d.json"
    assert main(["diagnose", str(out / "kd-diverge" / "run.json"), "--output", str(dest)]) == 0
    stored = json.loads((out / "kd-diverge" / "diagnostics.json").read_text())
    fresh = json.loads(dest.read_text())
    assert fresh == stored


def test_validate_json(capsys):
    assert main(["validate", "sine-chain", "--format", "json"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["passed"] is True
