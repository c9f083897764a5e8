"""Naive per-pair vs gather-GEMM-scatter sparse convolution timing."""

from __future__ import annotations

import platform
import statistics
import time

import numpy as np

from .nn.layers import naive_sparse_conv, sparse_conv_forward
from .sparse.kernel_map import build_kernel_map

REPORT_SCHEMA = {
    "type": "object",
    "required": ["warmups", "reps", "channels", "machine", "rows"],
    "additionalProperties": False,
    "properties": {
        "warmups": {"type": "integer", "minimum": 0},
        "reps": {"type": "integer", "minimum": 1},
        "channels": {"type": "integer", "minimum": 1},
        "machine": {"type": "string"},
        "rows": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["voxels", "pairs", "max_rel_err", "naive_median_s", "gemm_median_s", "speedup"],
                "properties": {
                    "voxels": {"type": "integer", "minimum": 1},
                    "pairs": {"type": "integer", "minimum": 0},
                    "max_rel_err": {"type": "number", "minimum": 0},
                    "naive_median_s": {"type": "number", "minimum": 0},
                    "gemm_median_s": {"type": "number", "minimum": 0},
                    "speedup": {"type": "number", "minimum": 0},
                },
            },
        },
    },
}

CORRECTNESS_TOL = 1e-6


class CorrectnessGateError(AssertionError):
    """GEMM and naive outputs disagree, so timings would be meaningless."""


def synthetic_cloud(n_voxels: int, seed: int = 0) -> np.ndarray:
    """Scan-like voxels: a ground sheet with two wall strips, ``n_voxels`` unique sites."""
    rng = np.random.default_rng(seed)
    side = int(np.ceil(np.sqrt(n_voxels * 1.25)))
    ground = np.stack(np.meshgrid(np.arange(side), np.arange(side), [0], indexing="ij"), -1).reshape(-1, 3)
    walls = np.array([[x, y, z] for x in range(side) for y in (0, side - 1) for z in range(1, 4)])
    sites = np.concatenate([walls, ground])
    keep = np.sort(rng.choice(len(sites), size=min(n_voxels, len(sites)), replace=False))
    return sites[keep] - side // 2


def _median_time(fn, warmups: int, reps: int) -> float:
    for _ in range(warmups):
        fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def bench_kernel(sizes=(10000, 50000, 200000), channels: int = 16, warmups: int = 10, reps: int = 30,
                 seed: int = 0, log=None) -> dict:
    rows = []
    rng = np.random.default_rng(seed)
    for n in sizes:
        coords = synthetic_cloud(n, seed)
        km = build_kernel_map(coords, 3, 1)
        x = rng.normal(size=(km.n_in, channels)).astype(np.float32)
        w = (rng.normal(size=(27, channels, channels)) / np.sqrt(27 * channels)).astype(np.float32)
        b = rng.normal(size=channels).astype(np.float32)
        fast = sparse_conv_forward(x, km, w, b).astype(np.float64)
        slow = naive_sparse_conv(x.astype(np.float64), km, w.astype(np.float64), b.astype(np.float64))
        err = float(np.max(np.abs(fast - slow)) / max(np.max(np.abs(slow)), 1e-30))
        if not err < CORRECTNESS_TOL:
            raise CorrectnessGateError(f"{n} voxels: relative error {err:.3e} >= {CORRECTNESS_TOL}")
        t_naive = _median_time(lambda: naive_sparse_conv(x, km, w, b), warmups, reps)
        t_gemm = _median_time(lambda: sparse_conv_forward(x, km, w, b), warmups, reps)
        row = {"voxels": int(km.n_in), "pairs": int(km.n_pairs), "max_rel_err": err,
               "naive_median_s": t_naive, "gemm_median_s": t_gemm,
               "speedup": t_naive / t_gemm if t_gemm > 0 else 0.0}
        rows.append(row)
        if log:
            log(f"{row['voxels']:>8d} voxels  naive {t_naive * 1e3:9.2f} ms  gemm {t_gemm * 1e3:9.2f} ms"
                f"  speedup {row['speedup']:.2f}x")
    return {"warmups": warmups, "reps": reps, "channels": channels,
            "machine": f"{platform.machine()} {platform.processor() or platform.system()}", "rows": rows}
