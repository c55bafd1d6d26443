import json
import subprocess
import sys

import numpy as np
import pytest

from bohmcollapse import cli, scenarios

SMALL = """
scenario = "double_packet_superposition"
seed = 4
[grid]
n_points = 128
length = "16 natural"
[hamiltonian]
potential = "double_well"
omega = "20 natural"
[collapse]
gamma_L = "2 natural"
variant = "bohmian_only"
[initial]
units = "natural"
centers = [-5.0, 5.0]
weights = [0.6, 0.4]
[time]
dt = "0.01 natural"
total = "0.6 natural"
checkpoint_interval = 25
[ensemble]
size = 6
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "small.toml"
    p.write_text(SMALL)
    return p


def run_cli(*args):
    return subprocess.run([sys.executable, "-m", "bohmcollapse", *map(str, args)],
                          capture_output=True, text=True)


def test_run_writes_outputs(cfg_path, tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["run", str(cfg_path), "--out-dir", str(out)]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["out_dir"] == str(out)
    for name in ("timeseries.csv", "timeseries.json", "summary.json", "timing.json"):
        assert (out / name).exists(), name
    assert sorted(p.name for p in out.glob("checkpoint_*.bin")) == [
        "checkpoint_00000025.bin", "checkpoint_00000050.bin"]
    summary = json.loads((out / "summary.json").read_text())
    assert "wall_time_s" not in summary and summary["steps"] == 60


@pytest.mark.parametrize("emit,present,absent", [
    ("csv", "timeseries.csv", "timeseries.json"),
    ("json", "timeseries.json", "timeseries.csv"),
])
def test_emit_flag(cfg_path, tmp_path, emit, present, absent):
    out = tmp_path / emit
    assert cli.main(["run", str(cfg_path), "--out-dir", str(out), "--emit", emit]) == 0
    assert (out / present).exists() and not (out / absent).exists()


def test_same_seed_gives_identical_bytes(cfg_path, tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    for d in (a, b):
        assert run_cli("run", cfg_path, "--out-dir", d, "--seed", 9).returncode == 0
    assert cli.main(["run", str(cfg_path), "--out-dir", str(c), "--seed", "10"]) == 0
    for name in ("timeseries.csv", "timeseries.json", "summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert (a / "timeseries.csv").read_bytes() != (c / "timeseries.csv").read_bytes()


def test_resume_is_bit_identical(cfg_path, tmp_path):
    full, cont = tmp_path / "full", tmp_path / "cont"
    assert cli.main(["run", str(cfg_path), "--out-dir", str(full)]) == 0
    assert cli.main(["resume", str(full / "checkpoint_00000025.bin"),
                     "--out-dir", str(cont)]) == 0
    for name in ("timeseries.csv", "timeseries.json", "summary.json"):
        assert (full / name).read_bytes() == (cont / name).read_bytes(), name


def test_resume_density_matrix_run(tmp_path):
    cfg = tmp_path / "dm.toml"
    cfg.write_text("""
scenario = "two_mode_density_matrix"
seed = 2
[grid]
n_points = 128
length = "16 natural"
[hamiltonian]
potential = "double_well"
omega = "8 natural"
[collapse]
gamma_L = "1 natural"
[initial]
units = "natural"
centers = [-6.0, -3.0, 3.0, 6.0]
weights = [0.25, 0.25, 0.25, 0.25]
[time]
dt = "0.01 natural"
total = "0.4 natural"
checkpoint_interval = 20
""")
    full, cont = tmp_path / "full", tmp_path / "cont"
    assert cli.main(["run", str(cfg), "--out-dir", str(full)]) == 0
    assert cli.main(["resume", str(full / "checkpoint_00000020.bin"), "--out-dir", str(cont)]) == 0
    assert (full / "timeseries.csv").read_bytes() == (cont / "timeseries.csv").read_bytes()


def test_corrupted_checkpoint_exit_code(cfg_path, tmp_path):
    out = tmp_path / "run"
    assert cli.main(["run", str(cfg_path), "--out-dir", str(out)]) == 0
    ck = out / "checkpoint_00000025.bin"
    data = bytearray(ck.read_bytes())
    data[70] ^= 0x55
    ck.write_bytes(bytes(data))
    res = run_cli("resume", ck, "--out-dir", tmp_path / "r")
    assert res.returncode == 3 and "checksum" in res.stderr


def test_grid_mismatch_names_both_sizes(cfg_path, tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["run", str(cfg_path), "--out-dir", str(out)]) == 0
    other = tmp_path / "other.toml"
    other.write_text(SMALL.replace("n_points = 128", "n_points = 256"))
    code = cli.main(["resume", str(out / "checkpoint_00000025.bin"), "--config", str(other),
                     "--out-dir", str(tmp_path / "r")])
    err = capsys.readouterr().err
    assert code == 3 and "128" in err and "256" in err


def test_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text(SMALL.replace('length = "16 natural"', "length = 16"))
    res = run_cli("run", bad, "--out-dir", tmp_path / "o")
    assert res.returncode == 2 and "grid.length" in res.stderr
    assert run_cli("run", tmp_path / "missing.toml").returncode == 2


def test_bad_workers_is_config_error(cfg_path, tmp_path):
    assert cli.main(["ensemble", str(cfg_path), "--workers", "0",
                     "--out-dir", str(tmp_path)]) == 2


def test_unwritable_output_exit_code(cfg_path, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["run", str(cfg_path), "--out-dir", str(blocker / "sub")]) == 3


def test_nan_exit_code(cfg_path, tmp_path, monkeypatch, capsys):
    original = scenarios.WaveSimulation.advance

    def poisoned(self):
        original(self)
        if self.state.step == 7:
            self.state.psi.amplitudes[0] = np.nan

    monkeypatch.setattr(scenarios.WaveSimulation, "advance", poisoned)
    code = cli.main(["run", str(cfg_path), "--out-dir", str(tmp_path / "o")])
    assert code == 4 and "step 7" in capsys.readouterr().err


def test_ensemble_is_worker_independent(cfg_path, tmp_path, capsys):
    one, two = tmp_path / "one", tmp_path / "two"
    assert cli.main(["ensemble", str(cfg_path), "--out-dir", str(one)]) == 0
    assert cli.main(["ensemble", str(cfg_path), "--out-dir", str(two), "--workers", "2"]) == 0
    assert (one / "ensemble.json").read_bytes() == (two / "ensemble.json").read_bytes()
    assert (one / "ensemble_runs.csv").read_bytes() == (two / "ensemble_runs.csv").read_bytes()
    counts = json.loads(capsys.readouterr().out.splitlines()[0])["counts"]
    assert sum(counts.values()) == 6


def test_ensemble_restarts_from_stored_runs(cfg_path, tmp_path):
    out = tmp_path / "ens"
    assert cli.main(["ensemble", str(cfg_path), "--out-dir", str(out)]) == 0
    first = (out / "ensemble.json").read_bytes()
    (out / "runs" / "run_000002.json").unlink()
    stamp = (out / "runs" / "run_000000.json").stat().st_mtime_ns
    assert cli.main(["ensemble", str(cfg_path), "--out-dir", str(out)]) == 0
    assert (out / "runs" / "run_000000.json").stat().st_mtime_ns == stamp
    assert (out / "ensemble.json").read_bytes() == first


def test_pheno_text_and_json(capsys):
    assert cli.main(["pheno"]) == 0
    text = capsys.readouterr().out
    assert "rate_small_object" in text.splitlines()[0] and len(text.splitlines()) == 3
    assert cli.main(["pheno", "--gamma", "1e-24", "--a-L", "1e-6", "--N", "1e12",
                     "--format", "json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert rows[0]["rate_small_object"] == pytest.approx(1.0)
    assert rows[0]["c_L"] == pytest.approx(1e-30)


def test_help_runs():
    res = run_cli("--help")
    assert res.returncode == 0 and "pheno" in res.stdout
