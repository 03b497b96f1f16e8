import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from dynhbf import __version__, cli
from dynhbf.metrics import check_architecture
from dynhbf.scenario import default_config, dump_config


@pytest.fixture
def small_ini(tmp_path):
    cfg = default_config(n_tx=12, n_rx=2, n_users=2, n_rf=3, n_slots=4, qos_thresholds=0.5)
    path = tmp_path / "small.ini"
    path.write_text(dump_config(cfg))
    return path


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[-1].startswith("# config_sha256=")
    assert f"version=dynhbf-{__version__}" in lines[-1]
    return list(csv.DictReader(lines[:-1]))


def test_validate(capsys, small_ini, tmp_path):
    code, out, _ = run(capsys, "validate", "--config", small_ini, "--out", tmp_path)
    assert code == 0
    assert json.loads(out)["valid"] is True


def test_invalid_config_exit_2(capsys, tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[array]\nn_rf = 64\n")
    code, _, err = run(capsys, "validate", "--config", bad, "--out", tmp_path)
    assert code == 2
    body = json.loads(err)
    assert body["error"] == "ConfigError"
    assert any(d["field"] == "n_rf" for d in body["details"])


def test_unknown_architecture_is_usage_error(capsys, tmp_path):
    with pytest.raises(SystemExit) as err:
        cli.main(["solve", "--arch", "PartialSPS", "--out", str(tmp_path)])
    assert err.value.code == 2


def test_bad_sweep_values_exit_2(capsys, small_ini, tmp_path):
    code, _, err = run(capsys, "sweep", "--config", small_ini, "--sweep", "qos",
                       "--values", "3,2", "--out", tmp_path)
    assert code == 2 and json.loads(err)["error"] == "UsageError"


def test_infeasible_qos_exit_1(capsys, small_ini, tmp_path):
    code, _, err = run(capsys, "solve", "--config", small_ini, "--arch", "FC", "--qos", "40",
                       "--out", tmp_path)
    assert code == 1
    assert json.loads(err.splitlines()[0])["error"] == "InfeasibleQoS"


def test_solve_outputs_and_round_trip(capsys, small_ini, tmp_path):
    code, out, _ = run(capsys, "solve", "--config", small_ini, "--arch", "DymDPS,FixSPS",
                       "--seed", 3, "--rate-unit", "nats", "--out", tmp_path)
    assert code == 0
    assert [json.loads(x)["architecture"] for x in out.splitlines()] == ["DymDPS", "FixSPS"]
    bf, record = cli.load_design(tmp_path / "design_DymDPS.json")
    assert check_architecture(bf.f_a, "DymDPS") == []
    assert record["status"] == "Converged" and record["seed"] == 3
    phases = record["dps_phases"]
    rebuilt = np.exp(1j * np.array(phases["phi1"])) + np.exp(1j * np.array(phases["phi2"]))
    support = np.abs(bf.f_a) > 0
    assert np.allclose(rebuilt[support], bf.f_a[support], atol=1e-12)
    _, fix = cli.load_design(tmp_path / "design_FixSPS.json")
    assert fix["dps_phases"] is None
    trace = read_csv(tmp_path / "trace_DymDPS.csv")
    assert len(trace) == record["iterations"]
    assert list(trace[0]) == ["iteration", "al_objective", "rmi", "min_rate_margin_nats",
                              "residual"]
    assert min(record["metrics"]["rate_per_user"]) >= 0.5 - 1e-3


def test_rerun_is_byte_identical(capsys, small_ini, tmp_path):
    for sub in ("a", "b"):
        assert run(capsys, "solve", "--config", small_ini, "--arch", "DymSPS", "--seed", 8,
                   "--out", tmp_path / sub)[0] == 0
    for name in ("design_DymSPS.json", "trace_DymSPS.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_sweep_matches_solve_and_jobs(capsys, small_ini, tmp_path):
    args = ["sweep", "--config", small_ini, "--arch", "FC,DymDPS", "--sweep", "qos",
            "--values", "0.5,1.0", "--draws", 1, "--seed", 4]
    assert run(capsys, *args, "--out", tmp_path / "serial")[0] == 0
    assert run(capsys, *args, "--jobs", 2, "--out", tmp_path / "pool")[0] == 0
    serial = (tmp_path / "serial" / "sweep.csv").read_bytes()
    assert serial == (tmp_path / "pool" / "sweep.csv").read_bytes()
    rows = read_csv(tmp_path / "serial" / "sweep.csv")
    assert [(r["qos_bits"], r["architecture"]) for r in rows] == [
        ("0.5", "FC"), ("0.5", "DymDPS"), ("1.0", "FC"), ("1.0", "DymDPS")]
    assert all(r["draws"] == "1" for r in rows)
    # a single point with one draw reproduces the solve command
    assert run(capsys, "solve", "--config", small_ini, "--arch", "DymDPS", "--qos", 0.5,
               "--seed", 4, "--out", tmp_path / "solo")[0] == 0
    _, record = cli.load_design(tmp_path / "solo" / "design_DymDPS.json")
    assert float(rows[1]["mean_rmi"]) == pytest.approx(record["metrics"]["rmi"], rel=1e-12)


def test_sweep_records_failures(capsys, small_ini, tmp_path):
    code, _, _ = run(capsys, "sweep", "--config", small_ini, "--arch", "FC", "--sweep", "qos",
                     "--values", "0.5,60", "--draws", 1, "--out", tmp_path)
    assert code == 0
    rows = read_csv(tmp_path / "sweep.csv")
    assert rows[1]["status"] == "InfeasibleQoS=1" and rows[1]["draws"] == "0"
    assert rows[1]["mean_rmi"] == "nan"


def test_n_tx_sweep(capsys, small_ini, tmp_path):
    code, _, _ = run(capsys, "sweep", "--config", small_ini, "--arch", "FC", "--sweep", "n_tx",
                     "--values", "8,12", "--draws", 1, "--out", tmp_path)
    assert code == 0
    assert [r["n_tx"] for r in read_csv(tmp_path / "sweep.csv")] == ["8", "12"]


def test_beampattern(capsys, small_ini, tmp_path):
    code, out, _ = run(capsys, "beampattern", "--config", small_ini, "--arch", "FC",
                       "--grid=-90:90:0.5", "--out", tmp_path)
    assert code == 0
    rows = read_csv(tmp_path / "beampattern_FC.csv")
    assert len(rows) == 361
    assert max(float(r["gain_db"]) for r in rows) == 0.0
    assert "peak_to_sidelobe_db" in json.loads(out)


def test_bad_grid(capsys, small_ini, tmp_path):
    code, _, _ = run(capsys, "beampattern", "--config", small_ini, "--grid", "0:1",
                     "--out", tmp_path)
    assert code == 2


def test_roc(capsys, small_ini, tmp_path):
    code, _, _ = run(capsys, "roc", "--config", small_ini, "--arch", "FC,FixSPS",
                     "--trials", 2000, "--pfa", "0.01,0.1,0.5", "--out", tmp_path)
    assert code == 0
    rows = read_csv(tmp_path / "roc.csv")
    assert list(rows[0])[:5] == ["p_fa", "p_d", "trials", "architecture", "seed"]
    for arch in ("FC", "FixSPS"):
        pd = [float(r["p_d"]) for r in rows if r["architecture"] == arch]
        assert len(pd) == 5 and pd[0] == 0.0 and pd[-1] == 1.0
        assert np.all(np.diff(pd) >= 0)


def test_module_entry_point(small_ini, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "dynhbf", "validate", "--config",
                           str(small_ini), "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["valid"]
    proc = subprocess.run([sys.executable, "-m", "dynhbf", "solve", "--arch", "nope"],
                          capture_output=True, text=True)
    assert proc.returncode == 2


def test_streams_are_independent():
    a = cli.stream(1, 0, 0).random(4)
    assert np.array_equal(a, cli.stream(1, 0, 0).random(4))
    assert not np.array_equal(a, cli.stream(1, 1, 0).random(4))
    assert not np.array_equal(a, cli.stream(1, 0, 1).random(4))
