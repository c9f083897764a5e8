"""Kernel-map construction for submanifold (stride 1) and strided sparse convolution."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .hashing import CuckooTable, pack_coords


def kernel_offsets(kernel_size: int) -> np.ndarray:
    """All offsets of a cubic window in canonical (dx, dy, dz) lexicographic order."""
    r = (kernel_size - 1) // 2
    rng = range(-r, r + 1)
    return np.array(list(product(rng, rng, rng)), dtype=np.int64).reshape(-1, 3)


def downsample_coords(coords, stride: int = 2) -> np.ndarray:
    """Unique ``floor(c / stride)`` rows, ordered by first occurrence."""
    c = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
    if c.shape[0] == 0:
        return c.copy()
    down = np.floor_divide(c, stride)
    _, first = np.unique(pack_coords(down), return_index=True)
    return down[np.sort(first)]


@dataclass
class KernelMap:
    """Per-offset (input index, output index) pairs.

    ``in_idx[j]`` / ``out_idx[j]`` hold the pairs of offset ``offsets[j]``,
    each list sorted by output index.  Within one offset every input and
    every output index appears at most once, so scatter-add by fancy
    indexing is exact.
    """

    in_coords: np.ndarray
    out_coords: np.ndarray
    offsets: np.ndarray
    in_idx: list[np.ndarray]
    out_idx: list[np.ndarray]
    kernel_size: int
    stride: int

    @property
    def n_in(self) -> int:
        return self.in_coords.shape[0]

    @property
    def n_out(self) -> int:
        return self.out_coords.shape[0]

    @property
    def volume(self) -> int:
        return self.offsets.shape[0]

    def pair_counts(self) -> np.ndarray:
        return np.array([p.size for p in self.in_idx], dtype=np.int64)

    @property
    def n_pairs(self) -> int:
        return int(self.pair_counts().sum())

    def pairs(self) -> set[tuple[tuple[int, int, int], int, int]]:
        """All pairs as a set of (offset, input index, output index)."""
        out = set()
        for off, ii, oo in zip(self.offsets, self.in_idx, self.out_idx):
            key = tuple(int(v) for v in off)
            out.update((key, int(i), int(o)) for i, o in zip(ii, oo))
        return out

    def dump(self) -> str:
        """Text fixture: one ``"dx,dy,dz: i->o"`` line per pair, canonical order."""
        lines = []
        for off, ii, oo in zip(self.offsets, self.in_idx, self.out_idx):
            tag = ",".join(str(int(v)) for v in off)
            lines.extend(f"{tag}: {int(i)}->{int(o)}" for i, o in zip(ii, oo))
        return "\n".join(lines)


def build_kernel_map(in_coords, kernel_size: int = 3, stride: int = 1,
                     table: CuckooTable | None = None) -> KernelMap:
    """Find, for every kernel offset, which input sites feed which output sites.

    stride 1 keeps the active set (``out = in``) and pairs ``in[i] = out[o] + d``;
    stride 2 uses ``out = unique(floor(in / 2))`` and pairs ``in[i] = 2 out[o] + d``.
    """
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ValueError(f"kernel_size must be a positive odd integer, got {kernel_size}")
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    in_coords = np.ascontiguousarray(in_coords, dtype=np.int64).reshape(-1, 3)
    offsets = kernel_offsets(kernel_size)
    out_coords = in_coords if stride == 1 else downsample_coords(in_coords, stride)
    n_out = out_coords.shape[0]
    if n_out == 0:
        empty = [np.zeros(0, dtype=np.int64) for _ in offsets]
        return KernelMap(in_coords, out_coords, offsets, empty, list(empty), kernel_size, stride)

    if table is None:
        table = CuckooTable.build(pack_coords(in_coords))
    # query every (offset, output) combination in one batch
    query = (out_coords * stride)[None, :, :] + offsets[:, None, :]
    found, vals = table.query(pack_coords(query.reshape(-1, 3)))
    found = found.reshape(offsets.shape[0], n_out)
    vals = vals.reshape(offsets.shape[0], n_out)
    in_idx, out_idx = [], []
    for j in range(offsets.shape[0]):
        o = np.flatnonzero(found[j])
        out_idx.append(o)
        in_idx.append(vals[j, o])
    return KernelMap(in_coords, out_coords, offsets, in_idx, out_idx, kernel_size, stride)

