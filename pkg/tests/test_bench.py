import jsonschema
import numpy as np
import pytest

from lidarnav import bench
from lidarnav.bench import REPORT_SCHEMA, CorrectnessGateError, bench_kernel, synthetic_cloud


def test_synthetic_cloud_unique_and_sized():
    c = synthetic_cloud(3000, 1)
    assert c.shape == (3000, 3)
    assert len(np.unique(c, axis=0)) == 3000
    assert np.array_equal(c, synthetic_cloud(3000, 1))


def test_small_report_validates():
    lines = []
    report = bench_kernel([800, 1500], channels=4, warmups=1, reps=2, log=lines.append)
    jsonschema.validate(report, REPORT_SCHEMA)
    assert [r["voxels"] for r in report["rows"]] == [800, 1500]
    assert all(r["max_rel_err"] < 1e-6 and r["speedup"] > 0 for r in report["rows"])
    assert len(lines) == 2


def test_gate_blocks_wrong_kernel(monkeypatch):
    real = bench.sparse_conv_forward
    monkeypatch.setattr(bench, "sparse_conv_forward", lambda x, km, w, b: real(x, km, w, b) * 1.001)
    with pytest.raises(CorrectnessGateError):
        bench_kernel([500], channels=4, warmups=0, reps=1)


def test_schema_rejects_missing_fields():
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate({"warmups": 1, "reps": 1, "channels": 1, "machine": "x", "rows": []},
                            REPORT_SCHEMA)
