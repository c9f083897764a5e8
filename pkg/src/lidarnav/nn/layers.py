"""Layer primitives with hand-written backward passes.

Every function is dtype-preserving so the same code runs in float32 for
training and float64 for finite-difference checks.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from ..sparse.kernel_map import KernelMap


@dataclass
class SparseTensor:
    coords: np.ndarray    # (n, 3) int64
    features: np.ndarray  # (n, C) float

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] != self.coords.shape[0]:
            raise ValueError(
                f"feature rows {self.features.shape} do not match {self.coords.shape[0]} coordinates"
            )

    @property
    def n(self) -> int:
        return self.coords.shape[0]


# --------------------------------------------------------------------------- sparse conv
def gather(features: np.ndarray, km: KernelMap, j: int) -> np.ndarray:
    """Rows of ``features`` feeding offset ``j``, laid out contiguously in pair order."""
    return features[km.in_idx[j]]


def _check_conv(features, km: KernelMap, weight):
    if features.shape[0] != km.n_in:
        raise ValueError(f"kernel map built for {km.n_in} sites, tensor has {features.shape[0]}")
    if weight.shape[0] != km.volume or weight.shape[1] != features.shape[1]:
        raise ValueError(
            f"weight {weight.shape} incompatible with {km.volume} offsets x {features.shape[1]} channels"
        )


def sparse_conv_forward(features: np.ndarray, km: KernelMap, weight: np.ndarray,
                        bias: np.ndarray | None = None, workers: int = 1) -> np.ndarray:
    """Gather -> GEMM -> scatter-add, one offset at a time.

    Rows are accumulated in offset order regardless of ``workers`` so the
    result is bit-identical for any thread count.
    """
    _check_conv(features, km, weight)
    out = np.zeros((km.n_out, weight.shape[2]), dtype=features.dtype)
    active = [j for j in range(km.volume) if km.in_idx[j].size]

    def product(j):
        return gather(features, km, j) @ weight[j]

    if workers > 1 and len(active) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(product, active))
        for j, part in zip(active, parts):
            out[km.out_idx[j]] += part
    else:
        for j in active:
            out[km.out_idx[j]] += product(j)
    if bias is not None:
        out += bias
    return out


def transpose_kernel_map(km: KernelMap) -> KernelMap:
    """Swap pair roles and negate offsets: the map that carries gradients back to inputs."""
    return KernelMap(
        in_coords=km.out_coords,
        out_coords=km.in_coords,
        offsets=-km.offsets,
        in_idx=km.out_idx,
        out_idx=km.in_idx,
        kernel_size=km.kernel_size,
        stride=km.stride,
    )


def sparse_conv_backward(grad_out: np.ndarray, features: np.ndarray, km: KernelMap,
                         weight: np.ndarray, workers: int = 1):
    """Return (grad_features, grad_weight, grad_bias)."""
    kmt = transpose_kernel_map(km)
    grad_x = sparse_conv_forward(grad_out, kmt, weight.transpose(0, 2, 1), None, workers)
    grad_w = np.zeros_like(weight)
    for j in range(km.volume):
        ii = km.in_idx[j]
        if ii.size:
            grad_w[j] = features[ii].T @ grad_out[km.out_idx[j]]
    return grad_x, grad_w, grad_out.sum(axis=0)


@numba.njit(cache=True)
def _pairwise_accumulate(x, weight, in_flat, out_flat, off_flat, out):
    c_in = x.shape[1]
    c_out = weight.shape[2]
    for p in range(in_flat.shape[0]):
        i = in_flat[p]
        o = out_flat[p]
        d = off_flat[p]
        for co in range(c_out):
            acc = out[o, co]
            for ci in range(c_in):
                acc += x[i, ci] * weight[d, ci, co]
            out[o, co] = acc


def naive_sparse_conv(features: np.ndarray, km: KernelMap, weight: np.ndarray,
                      bias: np.ndarray | None = None) -> np.ndarray:
    """Per-pair multiply-accumulate straight from the scattered rows (no gather, no GEMM)."""
    _check_conv(features, km, weight)
    counts = km.pair_counts()
    in_flat = np.concatenate(km.in_idx) if counts.sum() else np.zeros(0, np.int64)
    out_flat = np.concatenate(km.out_idx) if counts.sum() else np.zeros(0, np.int64)
    off_flat = np.repeat(np.arange(km.volume, dtype=np.int64), counts)
    out = np.zeros((km.n_out, weight.shape[2]), dtype=features.dtype)
    w = np.ascontiguousarray(weight, dtype=features.dtype)
    _pairwise_accumulate(np.ascontiguousarray(features), w, in_flat, out_flat, off_flat, out)
    if bias is not None:
        out += bias
    return out


# --------------------------------------------------------------------------- batch norm
def batchnorm_fwd(x: np.ndarray, gamma, beta, running_mean, running_var, training: bool,
                  momentum: float = 0.9, eps: float = 1e-5):
    """Normalize over rows.  Updates the running stats in place when training."""
    if x.shape[0] == 0:
        raise ValueError("batch norm on an empty tensor")
    if training:
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        n = x.shape[0]
        unbiased = var * (n / (n - 1)) if n > 1 else var
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * unbiased
    else:
        mean, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    return xhat * gamma + beta, (xhat, inv_std, gamma, training)


def batchnorm_bwd(dy: np.ndarray, cache):
    xhat, inv_std, gamma, training = cache
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    if not training:
        return dxhat * inv_std, dgamma, dbeta
    n = dy.shape[0]
    dx = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dx, dgamma, dbeta


# --------------------------------------------------------------------------- pointwise
def relu_fwd(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_bwd(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * (x > 0)


def dense_fwd(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    y = x @ w
    if b is not None:
        y = y + b
    return y


def dense_bwd(x: np.ndarray, w: np.ndarray, dy: np.ndarray, has_bias: bool = True):
    """Return (dx, dw, db); db is None for bias-free layers."""
    return dy @ w.T, x.T @ dy, (dy.sum(axis=0) if has_bias else None)


# --------------------------------------------------------------------------- pooling
def segment_starts(batch: np.ndarray, n_segments: int) -> np.ndarray:
    """Start row of each segment for rows already grouped by segment id."""
    return np.searchsorted(batch, np.arange(n_segments + 1))


def global_avg_pool_fwd(x: np.ndarray, batch: np.ndarray | None = None, n_segments: int = 1):
    """Mean over the rows of each segment; an empty segment pools to zeros."""
    if batch is None:
        batch = np.zeros(x.shape[0], dtype=np.int64)
    bounds = segment_starts(batch, n_segments)
    counts = np.diff(bounds)
    out = np.zeros((n_segments, x.shape[1]), dtype=x.dtype)
    nonempty = counts > 0
    if x.shape[0]:
        # empty segments have zero length, so summing between consecutive
        # non-empty starts gives exactly each non-empty segment
        sums = np.add.reduceat(x, bounds[:-1][nonempty], axis=0)
        out[nonempty] = sums / counts[nonempty, None]
    return out, (batch, counts, x.shape[0])


def global_avg_pool_bwd(dy: np.ndarray, cache) -> np.ndarray:
    batch, counts, n = cache
    if n == 0:
        return np.zeros((0, dy.shape[1]), dtype=dy.dtype)
    scale = dy / np.maximum(counts, 1)[:, None]
    return scale[batch]


# --------------------------------------------------------------------------- dense 2D conv
def _im2col(x: np.ndarray, k: int, stride: int, pad: int):
    b, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    cols = np.empty((b, ho, wo, k, k, c), dtype=x.dtype)
    for di in range(k):
        for dj in range(k):
            cols[:, :, :, di, dj, :] = xp[:, di:di + stride * ho:stride, dj:dj + stride * wo:stride, :]
    return cols.reshape(b, ho, wo, k * k * c), (ho, wo)


def conv2d_fwd(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, stride: int = 2, pad: int = 1):
    """NHWC convolution; ``w`` has shape (k, k, C_in, C_out)."""
    k = w.shape[0]
    cols, (ho, wo) = _im2col(x, k, stride, pad)
    y = cols @ w.reshape(-1, w.shape[3])
    if b is not None:
        y = y + b
    return y, (x.shape, cols, stride, pad)


def conv2d_bwd(dy: np.ndarray, w: np.ndarray, cache):
    x_shape, cols, stride, pad = cache
    bsz, h, wd, c = x_shape
    k = w.shape[0]
    ho, wo = dy.shape[1], dy.shape[2]
    dw = (cols.reshape(-1, cols.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])).reshape(w.shape)
    db = dy.sum(axis=(0, 1, 2))
    dcols = (dy @ w.reshape(-1, w.shape[3]).T).reshape(bsz, ho, wo, k, k, c)
    dxp = np.zeros((bsz, h + 2 * pad, wd + 2 * pad, c), dtype=dy.dtype)
    for di in range(k):
        for dj in range(k):
            dxp[:, di:di + stride * ho:stride, dj:dj + stride * wo:stride, :] += dcols[:, :, :, di, dj, :]
    return dxp[:, pad:pad + h, pad:pad + wd, :], dw, db


def half_pool_fwd(x: np.ndarray):
    """Average the left and right halves (along width) of an NHWC map: (B, 2C)."""
    w = x.shape[2]
    left = x[:, :, : w // 2, :].mean(axis=(1, 2))
    right = x[:, :, w // 2:, :].mean(axis=(1, 2))
    return np.concatenate([left, right], axis=1), x.shape


def half_pool_bwd(dy: np.ndarray, shape) -> np.ndarray:
    b, h, w, c = shape
    dx = np.empty(shape, dtype=dy.dtype)
    half = w // 2
    dx[:, :, :half, :] = (dy[:, None, None, :c] / (h * half))
    dx[:, :, half:, :] = (dy[:, None, None, c:] / (h * (w - half)))
    return dx
