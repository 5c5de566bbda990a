import json
import subprocess
import sys

import numpy as np
import pytest

from kel.cli import main
from kel.sde import read_snapshots_binary


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_check_granular(capsys):
    code, out, _ = run(capsys, "check", "--preset", "granular", "--beta", "1", "--theta", "0.05",
                       "--alpha", "0.02", "--probes", "2000")
    assert code == 0
    rep = json.loads(out)
    assert rep["kappa"] == pytest.approx(0.2176031, abs=1e-6)


def test_check_reports_missing_rate(capsys):
    code, out, _ = run(capsys, "check", "--preset", "granular", "--beta", "1", "--theta", "0.6",
                       "--probes", "500")
    assert code == 0 and json.loads(out)["kappa"] is None
    assert run(capsys, "check", "--preset", "chain", "--beta", "2")[0] == 2


def test_gramian_command(capsys):
    code, out, _ = run(capsys, "gramian", "--preset", "kinetic-ou", "--t", "1", "--s", "1")
    assert code == 0
    assert json.loads(out)["Q"] == [[pytest.approx(1 / 6, rel=1e-9)]]
    code, out, _ = run(capsys, "gramian", "--preset", "chain", "--s-grid", "0.001,0.003,0.01,0.03,0.06,0.1")
    assert code == 0 and json.loads(out)["scaling"]["slope"] == pytest.approx(4, abs=0.2)


def test_gramian_uncontrollable_is_numerical_failure(capsys, monkeypatch):
    import kel.gramian as g

    def boom(*a, **k):
        raise g.NotPositiveDefinite("rank failure")

    monkeypatch.setattr(g, "verify_gramian_scaling", boom)
    code, _, err = run(capsys, "gramian", "--s-grid", "0.001,0.1")
    assert code == 3 and "NotPositiveDefinite" in err


def test_unknown_flag_writes_nothing(capsys, tmp_path):
    out = tmp_path / "o"
    code, stdout, err = run(capsys, "simulate", "--bogus", "--out", str(out))
    assert code == 2 and stdout == "" and "bogus" in err
    assert not out.exists()
    assert run(capsys, "frobnicate")[0] == 2


def test_simulate_outputs_are_reproducible(capsys, tmp_path):
    args = ["simulate", "--preset", "kinetic-ou", "--N", "50", "--h", "0.01", "--T", "0.5",
            "--seed", "4", "--format", "both"]
    assert run(capsys, *args, "--out", str(tmp_path / "a"))[0] == 0
    assert run(capsys, "--threads", "3", *args, "--out", str(tmp_path / "b"))[0] == 0
    for name in ("snapshots.csv", "snapshots.kel"):
        assert (tmp_path / "a" / name).read_bytes() != b""
    # the output directory enters the echoed config, so compare data rather than headers
    head_a, arr_a = read_snapshots_binary(tmp_path / "a" / "snapshots.kel")
    head_b, arr_b = read_snapshots_binary(tmp_path / "b" / "snapshots.kel")
    assert np.array_equal(arr_a, arr_b) and head_a["times"] == [0.0, 0.5]
    assert "config_hash" in head_a and "version" in head_a
    first = (tmp_path / "a" / "snapshots.csv").read_text().splitlines()[0]
    assert "version=" in first and "config_hash=" in first


def test_config_file(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"t": 2.0, "s": 2.0}))
    code, out, _ = run(capsys, "--config", str(cfg), "gramian")
    assert code == 0 and json.loads(out)["Q"][0][0] == pytest.approx(2 / 6)
    cfg.write_text(json.dumps({"tt": 2.0}))
    assert run(capsys, "--config", str(cfg), "gramian")[0] == 2
    cfg.write_text("{not json")
    assert run(capsys, "--config", str(cfg), "gramian")[0] == 2


def test_couple_same_point(capsys):
    code, out, _ = run(capsys, "couple", "--preset", "granular", "--N", "20", "--h", "0.01",
                       "--T", "0.2", "--coupling", "same-point", "--x-std", "1", "--y-std", "1")
    assert code == 0
    rows = [l.split(",") for l in out.splitlines()[2:]]
    assert rows and all(float(r[2]) == 0.0 for r in rows)


def test_divergence_estimators(capsys, tmp_path):
    g = np.random.default_rng(0)
    np.save(tmp_path / "p.npy", g.normal(size=(300, 2)) + [1.0, 0.0])
    np.savetxt(tmp_path / "q.csv", g.normal(size=(300, 2)), delimiter=",")
    vals = {}
    for est in ("exact", "sinkhorn", "knn", "gaussian"):
        code, out, _ = run(capsys, "divergence", "--p", str(tmp_path / "p.npy"), "--q",
                           str(tmp_path / "q.csv"), "--estimator", est)
        assert code == 0
        vals[est] = json.loads(out)["value"]
    assert vals["exact"] == pytest.approx(1.0, abs=0.2)
    assert vals["sinkhorn"] == pytest.approx(vals["exact"], rel=0.05)
    assert vals["gaussian"] == pytest.approx(0.5, abs=0.15)
    assert run(capsys, "divergence", "--p", str(tmp_path / "missing.npy"), "--q", str(tmp_path / "q.csv"))[0] == 2


def test_experiment_command(capsys, tmp_path):
    code, out, _ = run(capsys, "experiment", "gramian-scaling", "--out", str(tmp_path), "--svg")
    assert code == 0 and json.loads(out)["passed"] is True
    assert {p.suffix for p in tmp_path.iterdir()} == {".json", ".csv", ".svg"}
    params = tmp_path / "p.json"
    params.write_text(json.dumps({"nonsense": 1}))
    assert run(capsys, "experiment", "gramian-scaling", "--params", str(params))[0] == 2
    assert run(capsys, "experiment", "no-such-experiment")[0] == 2


def test_threads_environment(capsys, monkeypatch):
    from kel.experiments import default_threads

    monkeypatch.setenv("KEL_THREADS", "2")
    assert default_threads() == 2
    monkeypatch.setenv("KEL_THREADS", "zero")
    assert run(capsys, "simulate", "--N", "5", "--T", "0.01", "--h", "0.01", "--out", "/nonexistent/x")[0] == 2
    monkeypatch.delenv("KEL_THREADS")
    assert default_threads() >= 1


def test_selftest_subset_and_exit_codes(capsys, tmp_path):
    code, out, _ = run(capsys, "selftest", "--only", "1,5", "--out", str(tmp_path))
    assert code == 0 and "1-constants" in out and "5-transport" in out
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        "1-constants.csv", "1-constants.json", "5-transport.csv", "5-transport.json"]
    code, out, _ = run(capsys, "selftest", "--only", "4", "--out", str(tmp_path))
    assert code == 3 and "FAIL" in out


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "kel.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "selftest" in res.stdout
