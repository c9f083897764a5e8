"""End-to-end acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The closed-loop criteria share one dataset and two trained models (with and
without rotation augmentation), built once per session.
"""

import json
import time

import jsonschema
import numpy as np
import pytest

from lidarnav import evidential as ev
from lidarnav import gradcheck
from lidarnav.bench import REPORT_SCHEMA, bench_kernel
from lidarnav.formats import network_bytes
from lidarnav.fusion import Entry, PredictionBuffer, fuse
from lidarnav.nn import layers as L
from lidarnav.nn.network import FastLiDARNet, count_params_macs
from lidarnav.sim import EpisodeConfig, NetworkPolicy, gen_dataset, load_dataset, make_track, run_episode
from lidarnav.sim.protocol import median_interventions, perturbed_start, recovery_sweep, success_rate, sweep
from lidarnav.sim.scanner import FailureSchedule
from lidarnav.sparse import build_kernel_map
from lidarnav.sparse.hashing import CuckooTable, pack_coords
from lidarnav.trainer import TrainConfig, evaluate, train

from oracles import brute_force_pairs, dense_conv3d_submanifold, nig_nll_mp, random_sites

TRAIN_TRACKS = ["train_a", "train_b", "train_c", "train_d",
                "train_a_cw", "train_b_cw", "train_c_cw", "train_d_cw"]
N_FRAMES = 2400
SEEDS = range(5)
ABLATION_SEEDS = range(7)
# desk-scale schedule: 8 epochs of batch 16; correction horizon equal to the oracle lookahead
DESK = dict(epochs=8, batch_size=16, seed=0, d_recover=8.0)


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n:2d} {'PASS' if ok else 'FAIL'}  {detail}", flush=True)
        assert ok, detail
    return emit


def _rel(a, b):
    """Largest absolute difference relative to the largest reference magnitude."""
    scale = max(float(np.max(np.abs(b), initial=0.0)), 1e-300)
    return float(np.max(np.abs(np.asarray(a) - b), initial=0.0)) / scale


# ---------------------------------------------------------------------------- shared fixtures
@pytest.fixture(scope="session")
def dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("acceptance") / "data"
    gen_dataset(TRAIN_TRACKS, N_FRAMES, 0, path)
    return load_dataset(path)


@pytest.fixture(scope="session")
def trained(dataset):
    t0 = time.perf_counter()
    result = train(dataset[1], TrainConfig(**DESK))
    return result, time.perf_counter() - t0


@pytest.fixture(scope="session")
def trained_no_rotation(dataset):
    return train(dataset[1], TrainConfig(**DESK, rotate=False))


@pytest.fixture(scope="session")
def closed_loop(trained):
    policy = NetworkPolicy(trained[0].net)
    t0 = time.perf_counter()
    failures = sweep(policy, ["test"], ["none", "uniform", "evidential"], SEEDS, FailureSchedule())
    clean = sweep(policy, ["test"], ["uniform", "evidential"], [0], None)
    return failures, clean, time.perf_counter() - t0


# ---------------------------------------------------------------------------- 1-6: exact oracles
def test_1_sparse_conv_correctness(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_naive = worst_dense = 0.0
    n_inst = 1200
    for i in range(n_inst):
        n = int(rng.integers(1, 160))
        cin, cout = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        stride = 2 if i % 4 == 3 else 1
        km = build_kernel_map(random_sites(rng, n), 3, stride)
        x = rng.normal(size=(km.n_in, cin))
        w = rng.normal(size=(27, cin, cout))
        b = rng.normal(size=cout)
        got = L.sparse_conv_forward(x, km, w, b)
        worst_naive = max(worst_naive, _rel(got, L.naive_sparse_conv(x, km, w, b)))
        if stride == 1:
            worst_dense = max(worst_dense, _rel(got, dense_conv3d_submanifold(km.in_coords, x, w, b)))
    dt = time.perf_counter() - t0
    ok = worst_naive < 1e-6 and worst_dense < 1e-5 and dt < 120
    verdict(1, ok, f"sparse conv: {n_inst} instances, rel err vs naive {worst_naive:.1e} (<1e-6), "
                   f"vs dense {worst_dense:.1e} (<1e-5), {dt:.1f} s (<120 s)")


def test_2_kernel_map_oracle(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    mismatches = 0
    for i in range(200):
        n = int(rng.integers(1, 501))
        coords = random_sites(rng, n, -6, 6)
        for stride in (1, 2):
            km = build_kernel_map(coords, 3, stride)
            out, expected = brute_force_pairs(coords, 3, stride)
            mismatches += (not np.array_equal(km.out_coords, out)) + (km.pairs() != expected)
    dt = time.perf_counter() - t0
    verdict(2, mismatches == 0 and dt < 60,
            f"kernel map: 200 sets x 2 strides vs brute force, {mismatches} mismatches, {dt:.1f} s (<60 s)")


def test_3_cuckoo_equivalence(verdict):
    rng = np.random.default_rng(303)
    # mixed operations, applied in batches that preserve sequential semantics
    universe = pack_coords(random_sites(rng, 60000, -20, 20))
    table, ref = CuckooTable.build(np.zeros(0, np.uint64)), {}
    ops = mismatches = 0
    while ops < 1_000_000:
        k = int(rng.integers(1, 4000))
        keys = universe[rng.integers(0, universe.size, size=k)]
        if rng.uniform() < 0.5:
            vals = rng.integers(0, 2 ** 40, size=k)
            table.insert(keys, vals)
            for key, v in zip(keys.tolist(), vals.tolist()):
                ref[key] = v
        else:
            found, vals = table.query(keys)
            exp_found = np.array([key in ref for key in keys.tolist()])
            exp_vals = np.array([ref.get(key, -1) for key in keys.tolist()])
            mismatches += int(np.sum(found != exp_found) + np.sum(vals != exp_vals))
        ops += k
    size_ok = len(table) == len(ref)
    # construction at load factor exactly one half, many independent key sets
    failures = 0
    for i in range(100_000):
        n = 4 << (i % 8)
        keys = rng.choice(2 ** 62, size=n, replace=False).astype(np.uint64)
        t = CuckooTable.build(keys)
        failures += t.load_factor != 0.5 or t.growths != 0 or not t.query(keys)[0].all()
    verdict(3, mismatches == 0 and size_ok and failures == 0,
            f"cuckoo: {ops} mixed ops, {mismatches} mismatches vs dict; 100000 builds at load 0.5, "
            f"{failures} failures")


def test_4_gradient_suite(verdict):
    t0 = time.perf_counter()
    results = gradcheck.run_all(points=1000, seed=0)
    dt = time.perf_counter() - t0
    worst = max(results, key=lambda r: r.max_rel_err)
    ok = all(r.passed and r.points >= 1000 for r in results) and dt < 300
    verdict(4, ok, f"gradients: {len(results)} checks x 1000 points, worst {worst.name} "
                   f"{worst.max_rel_err:.1e} (<1e-4), {dt:.1f} s (<300 s)")


def test_5_evidential_fixtures(verdict):
    e = ev.EvidentialParams(np.array([0.0]), np.array([2.0]), np.array([3.0]), np.array([0.8]))
    var = float(ev.epistemic_variance(e)[0])
    fixture = ev.EvidentialParams(np.array([0.1]), np.array([1.0]), np.array([1.0]), np.array([0.5]))
    nll = float(ev.nll_loss(fixture, np.array([0.1]))[0])
    oracle = nig_nll_mp(0.1, 0.1, 1.0, 1.0, 0.5)
    ok = abs(var - 0.8 / (2.0 * 2.0)) < 1e-9 and abs(nll - oracle) < 1e-9 and abs(nll - 1.0398) < 1e-4   # nominal value is quoted to 4 places
    verdict(5, ok, f"evidential: variance {var:.12f} (0.2), NLL {nll:.12f} vs high-precision {oracle:.12f}")


def _buffer(pairs):
    buf = PredictionBuffer(K=len(pairs))
    buf.bins[0] = {k: Entry(x, 1.0 / v, k) for k, (x, v) in enumerate(pairs)}
    return buf


def test_6_fusion_behaviour(verdict):
    rng = np.random.default_rng(606)
    worked = fuse(_buffer([(0.0, 0.5), (1.0, 2.0)]), 0.0, "evidential").control
    equal = invariant = 0
    for i in range(2000):
        n = int(rng.integers(1, 11))
        xs = rng.uniform(-0.3, 0.3, size=n)
        v = float(rng.uniform(1e-3, 10.0))
        a = fuse(_buffer([(x, v) for x in xs]), 0.0, "evidential").control
        equal += a == fuse(_buffer([(x, v) for x in xs]), 0.0, "uniform").control
        vs = rng.uniform(1e-3, 10.0, size=n)
        c = 2.0 ** int(rng.integers(-20, 21))
        base = fuse(_buffer(list(zip(xs, vs))), 0.0, "evidential").control
        invariant += base == fuse(_buffer(list(zip(xs, vs * c))), 0.0, "evidential").control
    ok = worked == 0.2 and equal == 2000 and invariant == 2000
    verdict(6, ok, f"fusion: worked example {worked!r}; equal-confidence == uniform {equal}/2000; "
                   f"scale invariance {invariant}/2000 (bitwise)")


# ---------------------------------------------------------------------------- 7-11: trained models
def test_7_closed_loop_robustness(verdict, dataset, closed_loop):
    failures, clean, dt = closed_loop
    med = {m: median_interventions(failures, m) for m in ("none", "uniform", "evidential")}
    per_seed = {m: [t.interventions for t in failures if t.mode == m] for m in med}
    clean_iv = {t.mode: t.interventions for t in clean}
    ok = (len(dataset[1]) >= 2000 and med["evidential"] < med["uniform"] and med["evidential"] < med["none"]
          and all(v <= 1 for v in clean_iv.values()))
    verdict(7, ok, f"closed loop with failures every 50 m, medians over {len(SEEDS)} seeds {med} "
                   f"(per seed {per_seed}); clean lap {clean_iv}; {len(dataset[1])} frames; "
                   f"episodes {dt:.0f} s")


def test_8_recovery(verdict, trained):
    policy = NetworkPolicy(trained[0].net)
    rates = {m: success_rate(recovery_sweep(policy, "test", 20.0, 20, m)) for m in ("none", "uniform", "evidential")}
    ok = rates["evidential"] >= 0.7 and rates["uniform"] >= rates["none"] and rates["evidential"] >= rates["none"]
    verdict(8, ok, f"recovery from +/-20 deg, 20 trials: success rates {rates}")


def test_9_training_sanity(verdict, dataset, trained, tmp_path):
    frames = dataset[1][:32]
    cfg = TrainConfig(epochs=300, batch_size=8, seed=0, rotate=False, scale=False, weight_decay=0.0,
                      lr0=3e-3, mode="deterministic")
    overfit = train(frames, cfg)
    mae = evaluate(overfit.net, frames, cfg)["mae"]
    full, t_full = trained
    again = train(dataset[1], TrainConfig(**DESK))
    same = network_bytes(full.net) == network_bytes(again.net)
    verdict(9, mae < 0.005 and same,
            f"training: 32-frame overfit MAE {mae:.5f} 1/m (<0.005); full run ({t_full:.0f} s) "
            f"byte-identical on repeat: {same}")


def test_10_accounting_and_bench(verdict, tmp_path):
    g = np.stack(np.meshgrid(np.arange(-100, 100), np.arange(-100, 100), [0], indexing="ij"), -1).reshape(-1, 3)
    net = FastLiDARNet()
    _, _, cache = net.forward([g], [np.ones((len(g), 5), np.float32)])
    acc = count_params_macs(net.cfg, cache["backbone"]["stats"])
    report = bench_kernel((10000, 50000, 200000), channels=16, warmups=2, reps=5, seed=0)
    jsonschema.validate(report, REPORT_SCHEMA)
    (tmp_path / "bench.json").write_text(json.dumps(report))
    speedups = {r["voxels"]: round(r["speedup"], 2) for r in report["rows"]}
    gate = all(r["max_rel_err"] < 1e-6 for r in report["rows"])
    ok = 0.3e9 <= acc.macs <= 1.3e9 and gate
    verdict(10, ok, f"accounting: {len(g)} voxels -> {acc.macs / 1e9:.3f} GMACs in [0.3, 1.3], "
                    f"{acc.params} params; bench gate passed: {gate}; gather-GEMM speedup {speedups}")


def test_11_rotation_ablation(verdict, trained, trained_no_rotation):
    track = make_track("test")
    base = EpisodeConfig(distance=80.0)
    worse = []
    for s in ABLATION_SEEDS:
        cfg = perturbed_start(base, track.length, s)
        with_rot = run_episode(NetworkPolicy(trained[0].net), track, None, cfg, s, "evidential")
        without = run_episode(NetworkPolicy(trained_no_rotation.net), track, None, cfg, s, "evidential")
        worse.append((without.interventions, with_rot.interventions))
    n_worse = sum(a > b for a, b in worse)
    verdict(11, n_worse > len(worse) / 2,
            f"rotation ablation on perturbed starts: no-rotation strictly worse on {n_worse}/{len(worse)} "
            f"seeds; (without, with) interventions {worse}")
