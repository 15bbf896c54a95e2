import json
import math
import subprocess
import sys

import numpy as np
import pytest

from dirac2d.cli import SWEEP_COLUMNS, main, snapshot_name, verify_manifest
from dirac2d.grid import read_snapshot

SMALL = """\
name = small
n = 32
length = 16
dt = 0.05
t_end = 1
output_every = 0.25
snapshot_every = 0.25
epsilon = 0.2
spinor = 1 0.5i
ks_diagnostics = false
"""


@pytest.fixture
def out(tmp_path, monkeypatch):
    monkeypatch.setenv("DIRAC2D_OUT", str(tmp_path / "out"))
    return tmp_path / "out"


def write(tmp_path, text, name="cfg.txt"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_usage_errors(capsys):
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["--version"]) == 0
    assert "dirac2d" in capsys.readouterr().out


def test_missing_config(tmp_path, out, capsys):
    assert main(["run", str(tmp_path / "nope.txt")]) == 1
    assert "not found" in capsys.readouterr().err


def test_config_error_names_line(tmp_path, out, capsys):
    assert main(["run", write(tmp_path, "n = 32\nepsilon = lots\n")]) == 1
    assert ":2:" in capsys.readouterr().err


def test_check_identities(capsys):
    assert main(["check-identities"]) == 0
    text = capsys.readouterr().out
    assert text.count("PASS") >= 12 and "FAIL" not in text
    assert main(["check-identities", "--scale-gamma1", "1.1"]) == 3
    cap = capsys.readouterr()
    assert "FAIL  clifford_anticommutators" in cap.out
    assert "clifford_anticommutators" in cap.err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "dirac2d", "check-identities", "--scale-gamma1", "1.1"],
                          capture_output=True, text=True)
    assert proc.returncode == 3


def test_minimal_default_config(tmp_path, out):
    assert main(["run", write(tmp_path, "# all defaults\n")]) == 0
    csv = (out / "run" / "diagnostics.csv").read_text().splitlines()
    assert csv[0].startswith("t,charge,ghost_integral") and len(csv) == 6
    assert verify_manifest(out / "run") == []


def test_run_artifacts_and_manifest(tmp_path, out):
    assert main(["run", write(tmp_path, SMALL)]) == 0
    d = out / "small"
    man = json.loads((d / "manifest.json").read_text())
    paths = {a["path"] for a in man["artifacts"]}
    assert {"config.txt", "diagnostics.csv", "monitors.csv", "psi_plus.bin", "scattering.csv"} <= paths
    assert f"snapshots/{snapshot_name(1.0)}" in paths
    assert man["status"] == "ok" and man["code_version"] and man["t_valid"] > 0
    assert verify_manifest(d) == []
    snap = read_snapshot(d / "snapshots" / snapshot_name(0.5))
    assert snap.time == 0.5 and snap.grid.n == 32
    (d / "diagnostics.csv").write_text("tampered\n")
    assert verify_manifest(d) == ["diagnostics.csv"]


def test_determinism_identical_checksums(tmp_path):
    cfg = write(tmp_path, SMALL)
    assert main(["run", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["run", cfg, "--out", str(tmp_path / "b")]) == 0
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())["artifacts"]
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())["artifacts"]
    assert ma == mb


def test_warning_header_in_csv(tmp_path, out):
    cfg = SMALL.replace("t_end = 1", "t_end = 6").replace("dt = 0.05", "dt = 0.25")
    assert main(["run", write(tmp_path, cfg, "long.txt"), "--out", str(tmp_path / "w")]) == 0
    first = (tmp_path / "w" / "diagnostics.csv").read_text().splitlines()[0]
    assert first.startswith("# WARNING: t_end = 6 exceeds t_valid")


def test_blowup_exits_numeric_and_keeps_snapshot(tmp_path, capsys):
    cfg = "epsilon = 20\nh_matrix = 1 0 0 2\ndt = 0.1\nn = 32\nlength = 16\nt_end = 5\n"
    d = tmp_path / "blow"
    assert main(["run", write(tmp_path, cfg), "--out", str(d)]) == 2
    assert "numerical failure" in capsys.readouterr().err
    assert (d / "snapshots" / "last_good.bin").exists()
    man = json.loads((d / "manifest.json").read_text())
    assert man["status"] == "numeric failure" and verify_manifest(d) == []


def test_scatter_report(tmp_path, capsys):
    d = tmp_path / "r"
    assert main(["run", write(tmp_path, SMALL), "--out", str(d)]) == 0
    assert main(["scatter-report", str(d)]) == 0
    lines = (d / "scattering_report.csv").read_text().splitlines()
    assert lines[0].startswith("t,err_h0") and len(lines) == 6
    assert main(["scatter-report", str(d), "--extrapolated", "--out", str(tmp_path / "x.csv")]) == 0
    assert (tmp_path / "x.csv").exists()
    assert main(["scatter-report", str(tmp_path / "missing")]) == 1


def test_convergence_default_order(tmp_path, capsys):
    assert main(["convergence", write(tmp_path, "conv_t_end = 0.5\n")]) == 0
    text = capsys.readouterr().out
    order = float(text.split("observed order = ")[1].split()[0])
    assert 1.8 <= order <= 2.2


def test_convergence_linear_notice(tmp_path, capsys):
    assert main(["convergence", write(tmp_path, "h_matrix = zero\n")]) == 0
    assert "exact linear flow" in capsys.readouterr().out


def test_convergence_under_resolved(tmp_path, capsys):
    assert main(["convergence", write(tmp_path, "n = 16\nwidth = 0.2\n")]) == 2
    assert "WARNING" in capsys.readouterr().err


def read_summary(path):
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(SWEEP_COLUMNS)
    return [dict(zip(SWEEP_COLUMNS, ln.split(","))) for ln in lines[1:]]


def test_sweep_epsilon_monotone(tmp_path):
    cfg = write(tmp_path, SMALL)
    assert main(["sweep", cfg, "--axis", "epsilon", "--values", "0.01,0.02,0.04", "--workers", "2",
                 "--out", str(tmp_path / "s")]) == 0
    rows = read_summary(tmp_path / "s" / "sweep_summary.csv")
    d1 = [float(r["max_D1"]) for r in rows]
    assert d1[0] < d1[1] < d1[2]
    assert all(r["status"] == "ok" for r in rows)
    assert (tmp_path / "s" / "epsilon=0.01" / "diagnostics.csv").exists()


def test_sweep_mass_envelope_finite(tmp_path):
    cfg = write(tmp_path, SMALL)
    assert main(["sweep", cfg, "--axis", "mass", "--values", "0 0.5 1", "--workers", "1",
                 "--out", str(tmp_path / "m")]) == 0
    rows = read_summary(tmp_path / "m" / "sweep_summary.csv")
    env = [float(r["max_massive_envelope"]) for r in rows]
    assert env[0] == 0.0 and all(math.isfinite(e) and e > 0 for e in env[1:])


def test_single_value_sweep_equals_run(tmp_path):
    cfg = write(tmp_path, SMALL)
    assert main(["sweep", cfg, "--axis", "delta", "--values", "0.1", "--out", str(tmp_path / "s")]) == 0
    assert main(["run", cfg, "--out", str(tmp_path / "r")]) == 0
    a = (tmp_path / "s" / "delta=0.1" / "diagnostics.csv").read_bytes()
    b = (tmp_path / "r" / "diagnostics.csv").read_bytes()
    assert a == b


def test_sweep_records_failed_cell(tmp_path):
    cfg = write(tmp_path, "h_matrix = 1 0 0 2\ndt = 0.1\nn = 32\nlength = 16\nt_end = 1\n"
                          "ks_diagnostics = false\n")
    assert main(["sweep", cfg, "--axis", "epsilon", "--values", "0.01 20", "--workers", "1",
                 "--out", str(tmp_path / "f")]) == 2
    rows = read_summary(tmp_path / "f" / "sweep_summary.csv")
    assert rows[0]["status"] == "ok" and rows[1]["status"].startswith("failed")
    assert np.isnan(float(rows[1]["max_D1"]))


def test_sweep_rejects_empty_values(tmp_path, capsys):
    assert main(["sweep", write(tmp_path, SMALL), "--axis", "epsilon"]) == 1
