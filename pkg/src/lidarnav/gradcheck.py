"""Central finite-difference checks for every layer backward and every loss gradient.

Each check builds a small random float64 instance, computes the analytic
gradient once, then compares it against central differences at randomly
sampled coordinates of every differentiable input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import evidential as ev
from .nn import layers as L
from .sparse.kernel_map import build_kernel_map

TOLERANCE = 1e-4
ANALYTIC_FLOOR = 1e-8


@dataclass
class CheckResult:
    name: str
    points: int
    max_rel_err: float
    passed: bool


def _sites(rng, n, side=6):
    cells = rng.choice(side ** 3, size=n, replace=False)
    return np.stack([cells // (side * side), (cells // side) % side, cells % side], axis=1)


def _away_from_zero(rng, shape, lo=0.05):
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(lo, 1.0, size=shape)


# each builder returns (f, inputs, grads): f() evaluates the scalar objective
# from the current contents of the arrays in ``inputs``; grads holds the
# analytic gradient of every input at the unperturbed point
def _sparse_conv(rng, stride):
    km = build_kernel_map(_sites(rng, 14), 3, stride)
    x = rng.normal(size=(km.n_in, 3))
    w = rng.normal(size=(27, 3, 4))
    b = rng.normal(size=4)
    r = rng.normal(size=(km.n_out, 4))
    f = lambda: float((L.sparse_conv_forward(x, km, w, b) * r).sum())
    gx, gw, gb = L.sparse_conv_backward(r, x, km, w)
    return f, {"x": x, "w": w, "b": b}, {"x": gx, "w": gw, "b": gb}


def _batchnorm(rng, training):
    x = rng.normal(size=(9, 4))
    gamma, beta = rng.normal(size=4), rng.normal(size=4)
    rm, rv = rng.normal(size=4), rng.uniform(0.5, 2.0, size=4)
    r = rng.normal(size=(9, 4))

    def f():
        y, _ = L.batchnorm_fwd(x, gamma, beta, rm.copy(), rv.copy(), training)
        return float((y * r).sum())

    _, cache = L.batchnorm_fwd(x, gamma, beta, rm.copy(), rv.copy(), training)
    dx, dg, db = L.batchnorm_bwd(r, cache)
    return f, {"x": x, "gamma": gamma, "beta": beta}, {"x": dx, "gamma": dg, "beta": db}


def _relu(rng):
    x = _away_from_zero(rng, (20, 3))
    r = rng.normal(size=x.shape)
    return (lambda: float((L.relu_fwd(x) * r).sum())), {"x": x}, {"x": L.relu_bwd(x, r)}


def _dense(rng):
    x, w, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3)), rng.normal(size=3)
    r = rng.normal(size=(5, 3))
    dx, dw, db = L.dense_bwd(x, w, r)
    return (lambda: float((L.dense_fwd(x, w, b) * r).sum())), {"x": x, "w": w, "b": b}, \
        {"x": dx, "w": dw, "b": db}


def _pool(rng):
    x = rng.normal(size=(12, 3))
    batch = np.sort(rng.integers(0, 3, size=12))
    r = rng.normal(size=(4, 3))
    _, cache = L.global_avg_pool_fwd(x, batch, 4)
    f = lambda: float((L.global_avg_pool_fwd(x, batch, 4)[0] * r).sum())
    return f, {"x": x}, {"x": L.global_avg_pool_bwd(r, cache)}


def _conv2d(rng):
    x = rng.normal(size=(2, 8, 8, 2))
    w, b = rng.normal(size=(3, 3, 2, 3)), rng.normal(size=3)
    r = rng.normal(size=(2, 4, 4, 3))
    _, cache = L.conv2d_fwd(x, w, b)
    dx, dw, db = L.conv2d_bwd(r, w, cache)
    f = lambda: float((L.conv2d_fwd(x, w, b)[0] * r).sum())
    return f, {"x": x, "w": w, "b": b}, {"x": dx, "w": dw, "b": db}


def _half_pool(rng):
    x = rng.normal(size=(2, 4, 6, 3))
    r = rng.normal(size=(2, 6))
    f = lambda: float((L.half_pool_fwd(x)[0] * r).sum())
    return f, {"x": x}, {"x": L.half_pool_bwd(r, x.shape)}


def _loss_inputs(rng, n=8):
    y = rng.normal(scale=0.05, size=n)
    raw = rng.normal(size=(n, 4))
    raw[:, 0] = y + _away_from_zero(rng, n, 0.01) * 0.05
    return y, raw


def _loss_mae(rng):
    y = rng.normal(scale=0.05, size=8)
    x = y + _away_from_zero(rng, 8, 0.01) * 0.05
    w = ev.LossWeights()
    _, dx, _ = ev.loss_gradients(x, None, y, w)
    return (lambda: ev.total_loss(x, None, y, w)), {"x": x}, {"x": dx}


def _loss_nll(rng):
    y, raw = _loss_inputs(rng)
    f = lambda: float(ev.nll_loss(ev.constrain(raw), y).sum())
    return f, {"raw": raw}, {"raw": ev.nll_gradient(raw, y)}


def _loss_reg(rng):
    y, raw = _loss_inputs(rng)
    f = lambda: float(ev.reg_loss(ev.constrain(raw), y).sum())
    return f, {"raw": raw}, {"raw": ev.reg_gradient(raw, y)}


def _loss_total(rng):
    y, raw = _loss_inputs(rng)
    x = y + _away_from_zero(rng, y.size, 0.01) * 0.05
    w = ev.LossWeights()
    _, dx, de = ev.loss_gradients(x, raw, y, w)
    f = lambda: ev.total_loss(x, ev.constrain(raw), y, w)
    return f, {"x": x, "raw": raw}, {"x": dx, "raw": de}


CHECKS = {
    "sparse_conv_s1": lambda rng: _sparse_conv(rng, 1),
    "sparse_conv_s2": lambda rng: _sparse_conv(rng, 2),
    "batchnorm_train": lambda rng: _batchnorm(rng, True),
    "batchnorm_eval": lambda rng: _batchnorm(rng, False),
    "relu": _relu,
    "dense": _dense,
    "global_avg_pool": _pool,
    "conv2d": _conv2d,
    "half_pool": _half_pool,
    "loss_mae": _loss_mae,
    "loss_nll": _loss_nll,
    "loss_r": _loss_reg,
    "loss_total": _loss_total,
}


def rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = ANALYTIC_FLOOR) -> float:
    """Largest |a - n| / max(|a|, |n|), ignoring entries with |a| below ``floor``."""
    a, n = np.asarray(analytic, np.float64), np.asarray(numeric, np.float64)
    keep = np.abs(a) >= floor
    if not keep.any():
        return float(np.max(np.abs(n), initial=0.0))
    return float(np.max(np.abs(a[keep] - n[keep]) / np.maximum(np.abs(a[keep]), np.abs(n[keep]))))


def check(name: str, points: int = 1000, seed: int = 0, h: float = 1e-6,
          tolerance: float = TOLERANCE) -> CheckResult:
    """Compare analytic and numeric gradients at ``points`` sampled coordinates.

    Coordinates are drawn over all inputs of a fresh instance; instances are
    rebuilt (with new random data) until ``points`` coordinates are covered.
    """
    rng = np.random.default_rng([seed, sorted(CHECKS).index(name)])
    done, worst = 0, 0.0
    while done < points:
        f, inputs, grads = CHECKS[name](rng)
        slots = [(k, i) for k, arr in inputs.items() for i in range(arr.size)]
        take = rng.permutation(len(slots))[:points - done]
        ana, num = np.empty(take.size), np.empty(take.size)
        for j, t in enumerate(take):
            k, i = slots[t]
            flat = inputs[k].reshape(-1)
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            num[j] = (fp - fm) / (2 * h)
            ana[j] = grads[k].reshape(-1)[i]
        worst = max(worst, rel_err(ana, num))
        done += take.size
    return CheckResult(name, done, worst, worst < tolerance)


def run_all(points: int = 1000, seed: int = 0, names=None) -> list[CheckResult]:
    return [check(n, points, seed) for n in (names or CHECKS)]
