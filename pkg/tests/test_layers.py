import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidarnav.nn import layers as L
from lidarnav.sparse import build_kernel_map

from oracles import central_diff, dense_conv3d_submanifold, max_rel_err, random_sites


def _instance(rng, n, cin, cout, stride=1, dtype=np.float64):
    coords = random_sites(rng, n)
    km = build_kernel_map(coords, 3, stride)
    x = rng.normal(size=(n, cin)).astype(dtype)
    w = rng.normal(size=(27, cin, cout)).astype(dtype)
    b = rng.normal(size=cout).astype(dtype)
    return km, x, w, b


def test_sparse_tensor_row_check():
    with pytest.raises(ValueError):
        L.SparseTensor(np.zeros((3, 3), np.int64), np.zeros((2, 4), np.float32))


def test_gather_identity_and_empty():
    km = build_kernel_map(np.array([[0, 0, 0], [5, 5, 5]]), 3, 1)
    x = np.arange(6, dtype=np.float32).reshape(2, 3)
    assert np.array_equal(L.gather(x, km, 13), x)
    assert L.gather(x, km, 0).shape == (0, 3)


def test_gather_canonical_order():
    km = build_kernel_map(np.array([[0, 0, 0], [1, 0, 0]]), 3, 1)
    x = np.array([[10.0], [20.0]])
    assert L.gather(x, km, 13).ravel().tolist() == [10.0, 20.0]


def test_single_site_identity_weight():
    km = build_kernel_map(np.array([[2, 2, 2]]), 3, 1)
    w = np.zeros((27, 4, 4), np.float32)
    w[13] = np.eye(4)
    x = np.arange(4, dtype=np.float32)[None]
    assert np.array_equal(L.sparse_conv_forward(x, km, w), x)


def test_two_site_hand_sum():
    km = build_kernel_map(np.array([[0, 0, 0], [1, 0, 0]]), 3, 1)
    w = np.ones((27, 1, 1), np.float32)
    out = L.sparse_conv_forward(np.array([[1.0], [2.0]], np.float32), km, w)
    assert out.ravel().tolist() == [3.0, 3.0]
    assert L.naive_sparse_conv(np.array([[1.0], [2.0]], np.float32), km, w).ravel().tolist() == [3.0, 3.0]


def test_shape_mismatch():
    km = build_kernel_map(np.array([[0, 0, 0]]), 3, 1)
    with pytest.raises(ValueError):
        L.sparse_conv_forward(np.zeros((2, 3)), km, np.zeros((27, 3, 2)))
    with pytest.raises(ValueError):
        L.sparse_conv_forward(np.zeros((1, 3)), km, np.zeros((27, 4, 2)))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 120), st.integers(1, 8), st.integers(1, 8), st.integers(0, 2 ** 31))
def test_gemm_matches_naive_and_dense(n, cin, cout, seed):
    rng = np.random.default_rng(seed)
    km, x, w, b = _instance(rng, n, cin, cout)
    got = L.sparse_conv_forward(x, km, w, b)
    assert np.allclose(got, L.naive_sparse_conv(x, km, w, b), rtol=1e-12, atol=1e-12)
    assert np.allclose(got, dense_conv3d_submanifold(km.in_coords, x, w, b), rtol=1e-10, atol=1e-10)


def test_thread_count_invariance():
    rng = np.random.default_rng(2)
    km, x, w, b = _instance(rng, 300, 16, 16, dtype=np.float32)
    one = L.sparse_conv_forward(x, km, w, b, workers=1)
    four = L.sparse_conv_forward(x, km, w, b, workers=4)
    assert one.tobytes() == four.tobytes()


def test_backward_identity_center():
    km = build_kernel_map(np.array([[0, 0, 0], [3, 3, 3]]), 3, 1)
    w = np.zeros((27, 1, 1))
    w[13] = 1.0
    g = np.array([[0.5], [-2.0]])
    gx, _, _ = L.sparse_conv_backward(g, np.ones((2, 1)), km, w)
    assert np.array_equal(gx, g)


def test_backward_zero_grad():
    rng = np.random.default_rng(4)
    km, x, w, _ = _instance(rng, 20, 3, 4)
    gx, gw, gb = L.sparse_conv_backward(np.zeros((20, 4)), x, km, w)
    assert not gx.any() and not gw.any() and not gb.any()


@pytest.mark.parametrize("stride", [1, 2])
def test_sparse_conv_finite_difference(stride):
    rng = np.random.default_rng(11 + stride)
    km, x, w, b = _instance(rng, 5 if stride == 1 else 12, 3, 2, stride)
    r = rng.normal(size=(km.n_out, 2))

    def f():
        return float((L.sparse_conv_forward(x, km, w, b) * r).sum())

    gx, gw, gb = L.sparse_conv_backward(r, x, km, w)
    assert max_rel_err(gx, central_diff(f, x, 1e-3)) < 1e-4
    assert max_rel_err(gw, central_diff(f, w, 1e-3)) < 1e-4
    assert max_rel_err(gb, central_diff(f, b, 1e-3)) < 1e-4


def test_transposed_map_swaps_roles():
    rng = np.random.default_rng(0)
    km = build_kernel_map(random_sites(rng, 40), 3, 2)
    kt = L.transpose_kernel_map(km)
    assert kt.n_in == km.n_out and kt.n_out == km.n_in
    assert {(tuple(-np.array(d)), o, i) for d, i, o in km.pairs()} == kt.pairs()


@pytest.mark.parametrize("training", [True, False])
def test_batchnorm_finite_difference(training):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(7, 3))
    gamma, beta = rng.normal(size=3), rng.normal(size=3)
    rm, rv = rng.normal(size=3), rng.uniform(0.5, 2, size=3)
    r = rng.normal(size=(7, 3))

    def f():
        y, _ = L.batchnorm_fwd(x, gamma, beta, rm.copy(), rv.copy(), training)
        return float((y * r).sum())

    _, cache = L.batchnorm_fwd(x, gamma, beta, rm.copy(), rv.copy(), training)
    dx, dg, db = L.batchnorm_bwd(r, cache)
    assert max_rel_err(dx, central_diff(f, x, 1e-4)) < 1e-4
    assert max_rel_err(dg, central_diff(f, gamma, 1e-4)) < 1e-4
    assert max_rel_err(db, central_diff(f, beta, 1e-4)) < 1e-4


def test_batchnorm_running_stats_and_empty():
    x = np.array([[1.0], [3.0]])
    rm, rv = np.zeros(1), np.ones(1)
    L.batchnorm_fwd(x, np.ones(1), np.zeros(1), rm, rv, True)
    assert rm[0] == pytest.approx(0.2)           # 0.9 * 0 + 0.1 * 2
    assert rv[0] == pytest.approx(0.9 + 0.1 * 2)  # unbiased batch variance is 2
    with pytest.raises(ValueError):
        L.batchnorm_fwd(np.zeros((0, 1)), np.ones(1), np.zeros(1), rm, rv, True)


def test_relu():
    assert L.relu_bwd(np.array([-1.0]), np.array([1.0]))[0] == 0
    assert L.relu_bwd(np.array([2.0]), np.array([1.0]))[0] == 1


def test_dense_finite_difference():
    rng = np.random.default_rng(3)
    x, w, b = rng.normal(size=(4, 6)), rng.normal(size=(6, 5)), rng.normal(size=5)
    r = rng.normal(size=(4, 5))

    def f():
        return float((L.dense_fwd(x, w, b) * r).sum())

    dx, dw, db = L.dense_bwd(x, w, r)
    for a, arr in ((dx, x), (dw, w), (db, b)):
        assert max_rel_err(a, central_diff(f, arr, 1e-4)) < 1e-4


def test_global_pool_identical_rows():
    x = np.tile(np.array([[1.0, -2.0, 3.0]]), (5, 1))
    y, cache = L.global_avg_pool_fwd(x)
    assert np.allclose(y, x[:1])
    dy = np.array([[5.0, 10.0, -5.0]])
    assert np.allclose(L.global_avg_pool_bwd(dy, cache), np.tile(dy / 5, (5, 1)))


def test_global_pool_segments_with_empty():
    x = np.arange(10, dtype=np.float64).reshape(5, 2)
    batch = np.array([0, 0, 2, 2, 2])
    y, cache = L.global_avg_pool_fwd(x, batch, 4)
    assert np.allclose(y, [[1, 2], [0, 0], [6, 7], [0, 0]])
    r = np.random.default_rng(0).normal(size=(4, 2))

    def f():
        return float((L.global_avg_pool_fwd(x, batch, 4)[0] * r).sum())

    assert max_rel_err(L.global_avg_pool_bwd(r, cache), central_diff(f, x, 1e-4)) < 1e-6


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(2, 6, 6, 3))
    w = rng.normal(size=(3, 3, 3, 4))
    b = rng.normal(size=4)
    y, _ = L.conv2d_fwd(x, w, b)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros((2, 3, 3, 4))
    for i in range(3):
        for j in range(3):
            patch = xp[:, 2 * i:2 * i + 3, 2 * j:2 * j + 3, :]
            ref[:, i, j] = np.einsum("bklc,klco->bo", patch, w) + b
    assert np.allclose(y, ref)


def test_conv2d_and_half_pool_finite_difference():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(2, 8, 8, 2))
    w = rng.normal(size=(3, 3, 2, 3))
    b = rng.normal(size=3)
    r = rng.normal(size=(2, 6))

    def f():
        y, _ = L.conv2d_fwd(x, w, b)
        p, _ = L.half_pool_fwd(y)
        return float((p * r).sum())

    y, cache = L.conv2d_fwd(x, w, b)
    _, shape = L.half_pool_fwd(y)
    dy = L.half_pool_bwd(r, shape)
    dx, dw, db = L.conv2d_bwd(dy, w, cache)
    for a, arr in ((dx, x), (dw, w), (db, b)):
        assert max_rel_err(a, central_diff(f, arr, 1e-4)) < 1e-4
