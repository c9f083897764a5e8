import json
import subprocess
import sys

import jsonschema
import pytest

from lidarnav import cli
from lidarnav.bench import REPORT_SCHEMA
from lidarnav.formats import parse_trace_summary


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    import os
    for name in list(os.environ):
        if name.startswith("LIDARNAV_"):
            monkeypatch.delenv(name)


def test_gen_data(tmp_path, capsys):
    assert cli.main(["gen-data", "--frames", "12", "--out", str(tmp_path / "d"), "--seed", "2"]) == 0
    out = capsys.readouterr().out
    assert "wrote 12 frames" in out and "lane-stable\t12" in out
    assert cli.main(["gen-data", "--frames", "12", "--out", str(tmp_path / "d")]) == 1
    assert cli.main(["gen-data", "--frames", "3", "--out", str(tmp_path / "no" / "d")]) == 1
    assert not (tmp_path / "no").exists()


def test_train_then_run(tmp_path, tiny_dataset, capsys):
    data, _ = tiny_dataset
    out = tmp_path / "tr"
    assert cli.main(["train", "--data", str(data), "--frames", "8", "--epochs", "1", "--out", str(out)]) == 0
    assert "curvature MAE" in capsys.readouterr().out
    assert (out / "model.sevw").exists()
    assert len((out / "metrics.tsv").read_text().splitlines()) == 2
    assert set(json.loads((out / "eval.json").read_text())) == {"mae", "mae_k0"}

    ini = tmp_path / "r.ini"
    ini.write_text("[sim]\ndistance = 20\n[run]\nseeds = 2\nrecovery_trials = 1\n"
                   "[failure]\nperiod = 10\nduration = 2\n")
    run = tmp_path / "run"
    assert cli.main(["run", "--config", str(ini), "--checkpoint", str(out / "model.sevw"),
                     "--mode", "uniform", "--out", str(run)]) == 0
    traces = sorted(p.name for p in (run / "traces").iterdir())
    assert traces == ["test_uniform_0.tsv", "test_uniform_1.tsv"]
    summary = parse_trace_summary((run / "traces" / traces[0]).read_text())
    assert summary["distance"] >= 20 and summary["failure_ticks"] > 0
    text = (run / "summary.tsv").read_text()
    assert "# median\ttest\tuniform" in text and "# recovery\ttest\tuniform\t1" in text


def test_train_missing_dataset(tmp_path):
    assert cli.main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path)]) == 1


def test_run_bad_checkpoint(tmp_path):
    bad = tmp_path / "x.sevw"
    bad.write_bytes(b"SEVW\x01")
    assert cli.main(["run", "--checkpoint", str(bad), "--out", str(tmp_path)]) == 1
    assert cli.main(["run", "--checkpoint", str(tmp_path / "missing"), "--out", str(tmp_path)]) == 1


def test_bench_kernel(tmp_path, monkeypatch):
    monkeypatch.setenv("LIDARNAV_BENCH_SIZES", "600")
    monkeypatch.setenv("LIDARNAV_BENCH_REPS", "1")
    monkeypatch.setenv("LIDARNAV_BENCH_WARMUPS", "0")
    assert cli.main(["bench-kernel", "--out", str(tmp_path)]) == 0
    jsonschema.validate(json.loads((tmp_path / "bench.json").read_text()), REPORT_SCHEMA)


def test_gradcheck_exit_codes(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("LIDARNAV_GRADCHECK_POINTS", "40")
    assert cli.main(["gradcheck", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "gradcheck.json").read_text())
    assert all(c["passed"] for c in report["checks"])
    from lidarnav.nn import layers as L
    real = L.relu_bwd
    monkeypatch.setattr(L, "relu_bwd", lambda x, dy: -real(x, dy))
    capsys.readouterr()
    assert cli.main(["gradcheck"]) == 1
    assert "FAIL  relu" in capsys.readouterr().out


def test_bad_config_and_env(tmp_path, monkeypatch):
    ini = tmp_path / "c.ini"
    ini.write_text("[bogus]\nx = 1\n")
    assert cli.main(["gradcheck", "--config", str(ini)]) == 1
    monkeypatch.setenv("LIDARNAV_NOPE", "1")
    assert cli.main(["gradcheck"]) == 1


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "lidarnav", "config-schema"], capture_output=True, text=True)
    assert r.returncode == 0 and "[train] epochs = 8" in r.stdout
    r = subprocess.run([sys.executable, "-m", "lidarnav", "run", "--mode", "median"], capture_output=True)
    assert r.returncode == 2
