"""Coordinate hashing and kernel-map construction."""

from .hashing import (
    CoordinateRangeError,
    CuckooBuildError,
    CuckooTable,
    cuckoo_build,
    cuckoo_query_batch,
    pack_coord,
    pack_coords,
    unpack_coord,
    unpack_coords,
)
from .kernel_map import KernelMap, build_kernel_map, downsample_coords, kernel_offsets

__all__ = [
    "CoordinateRangeError",
    "CuckooBuildError",
    "CuckooTable",
    "KernelMap",
    "build_kernel_map",
    "cuckoo_build",
    "cuckoo_query_batch",
    "downsample_coords",
    "kernel_offsets",
    "pack_coord",
    "pack_coords",
    "unpack_coord",
    "unpack_coords",
]
