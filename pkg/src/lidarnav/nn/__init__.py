"""Sparse network layers and the Fast-LiDARNet style model."""

from .layers import (SparseTensor, naive_sparse_conv, sparse_conv_backward, sparse_conv_forward,
                     transpose_kernel_map)
from .network import (Accounting, ArchConfig, FastLiDARNet, NetworkOutput, count_params_macs,
                      dense_count, fast_lidarnet_forward, init_params, param_specs,
                      sparse_conv_count)

__all__ = [
    "Accounting", "ArchConfig", "FastLiDARNet", "NetworkOutput", "SparseTensor", "count_params_macs", "dense_count",
    "fast_lidarnet_forward", "init_params", "naive_sparse_conv", "param_specs",
    "sparse_conv_backward", "sparse_conv_count", "sparse_conv_forward", "transpose_kernel_map",
]
