"""Coordinate packing and a vectorized two-choice Cuckoo hash table.

Voxel coordinates are packed into 64-bit keys so that neighbor lookups
become integer hash queries.  The table keeps two bucket arrays, each
bucket holding ``BUCKET_SLOTS`` (key, value) slots.  Construction runs
displacement rounds over all pending keys at once, which is the same
round structure a data-parallel (GPU) builder uses.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
import math

import numba
import numpy as np

COORD_BITS = 21
COORD_BIAS = 1 << 20
COORD_MIN = -COORD_BIAS
COORD_MAX = COORD_BIAS  # exclusive

EMPTY = np.uint64(0xFFFFFFFFFFFFFFFF)  # reserved top bit set; never a packed coordinate
BUCKET_SLOTS = 4
MAX_RESEEDS = 16
MAX_GROWTH = 4

_MASK21 = np.uint64((1 << COORD_BITS) - 1)
_U21 = np.uint64(21)
_U42 = np.uint64(42)


class CoordinateRangeError(ValueError):
    """A coordinate component falls outside [-2**20, 2**20)."""


class CuckooBuildError(RuntimeError):
    """Construction failed even after reseeding and capacity growth."""


def pack_coords(coords) -> np.ndarray:
    """Pack integer (x, y, z) rows into uint64 keys (21 biased bits per axis)."""
    c = np.asarray(coords, dtype=np.int64)
    if c.ndim == 1:
        c = c.reshape(1, 3)
    if c.shape[-1] != 3:
        raise ValueError(f"expected (..., 3) coordinates, got shape {c.shape}")
    if c.size and (c.min() < COORD_MIN or c.max() >= COORD_MAX):
        raise CoordinateRangeError(
            f"coordinate components must lie in [{COORD_MIN}, {COORD_MAX})"
        )
    b = (c + COORD_BIAS).astype(np.uint64)
    return (b[..., 0] << _U42) | (b[..., 1] << _U21) | b[..., 2]


def pack_coord(c) -> int:
    """Scalar convenience wrapper around :func:`pack_coords`."""
    return int(pack_coords(np.asarray(c).reshape(1, 3))[0])


def unpack_coords(keys) -> np.ndarray:
    k = np.asarray(keys, dtype=np.uint64)
    out = np.empty(k.shape + (3,), dtype=np.int64)
    out[..., 0] = ((k >> _U42) & _MASK21).astype(np.int64) - COORD_BIAS
    out[..., 1] = ((k >> _U21) & _MASK21).astype(np.int64) - COORD_BIAS
    out[..., 2] = (k & _MASK21).astype(np.int64) - COORD_BIAS
    return out


def unpack_coord(key: int) -> tuple[int, int, int]:
    x, y, z = unpack_coords(np.array([key], dtype=np.uint64))[0]
    return int(x), int(y), int(z)


# splitmix64 / murmur finalizer constants
_GOLDEN = 0x9E3779B97F4A7C15
_C1 = np.uint64(0xFF51AFD7ED558CCD)
_C2 = np.uint64(0xC4CEB9FE1A85EC53)
_S33 = np.uint64(33)
DEFAULT_SEEDS = (0x9E3779B97F4A7C15, 0xD1B54A32D192ED03)


def _splitmix(x: int) -> int:
    x = (x + _GOLDEN) & 0xFFFFFFFFFFFFFFFF
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def reseed(seeds: tuple[int, int], attempt: int) -> tuple[int, int]:
    """Derive a fresh pair of odd multipliers from the previous pair."""
    a = _splitmix(seeds[0] ^ (attempt * 0x632BE59BD9B4E019)) | 1
    b = _splitmix(seeds[1] + attempt) | 1
    if a == b:
        b = _splitmix(b) | 1
    return a, b


def mix(keys: np.ndarray, seed: int) -> np.ndarray:
    """Multiply-xorshift mixer; ``seed`` must be odd so the multiply is a bijection."""
    h = keys * np.uint64(seed)
    h ^= h >> _S33
    h *= _C1
    h ^= h >> _S33
    h *= _C2
    h ^= h >> _S33
    return h


@numba.njit(cache=True)
def _mix_one(key, seed):
    h = key * seed
    h ^= h >> np.uint64(33)
    h *= np.uint64(0xFF51AFD7ED558CCD)
    h ^= h >> np.uint64(33)
    h *= np.uint64(0xC4CEB9FE1A85EC53)
    h ^= h >> np.uint64(33)
    return h


@numba.njit(cache=True)
def _probe(keys, tkeys, tvals, seed0, seed1, mask, found, values):
    """Compiled lookup: both candidate buckets, every slot."""
    for i in range(keys.size):
        k = keys[i]
        for t in range(2):
            seed = seed0 if t == 0 else seed1
            b = np.int64(_mix_one(k, seed) & mask)
            hit = False
            for j in range(tkeys.shape[2]):
                if tkeys[t, b, j] == k:
                    found[i] = True
                    values[i] = tvals[t, b, j]
                    hit = True
                    break
            if hit:
                break


def _next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


class CuckooTable:
    """Two bucket arrays addressed by independent mixers.

    Build with :meth:`build`; the table is immutable afterwards except
    through :meth:`insert`, which is single-owner.  Queries never mutate
    and may run concurrently.
    """

    def __init__(self, capacity: int, seeds: tuple[int, int] = DEFAULT_SEEDS):
        capacity = max(2 * BUCKET_SLOTS, _next_pow2(capacity))
        self.capacity = capacity
        self.n_buckets = capacity // (2 * BUCKET_SLOTS)
        self.seeds = (seeds[0] | 1, seeds[1] | 1)
        self.keys = np.full((2, self.n_buckets, BUCKET_SLOTS), EMPTY, dtype=np.uint64)
        self.values = np.full((2, self.n_buckets, BUCKET_SLOTS), -1, dtype=np.int64)
        self.fill = np.zeros((2, self.n_buckets), dtype=np.int64)
        self.size = 0
        self.reseeds = 0
        self.growths = 0

    # ------------------------------------------------------------------ build
    @classmethod
    def build(cls, keys, values=None, seeds: tuple[int, int] = DEFAULT_SEEDS) -> "CuckooTable":
        keys = np.ascontiguousarray(keys, dtype=np.uint64).ravel()
        n = keys.size
        if values is None:
            values = np.arange(n, dtype=np.int64)
        values = np.ascontiguousarray(values, dtype=np.int64).ravel()
        if values.size != n:
            raise ValueError("keys and values differ in length")
        if n and np.unique(keys).size != n:
            raise ValueError("duplicate keys passed to CuckooTable.build")
        if n and np.any(keys == EMPTY):
            raise ValueError("the all-ones key is reserved")

        capacity = 2 * n
        seeds_now = seeds
        reseeds = 0
        for growth in range(MAX_GROWTH + 1):
            for attempt in range(MAX_RESEEDS + 1):
                table = cls(capacity, seeds_now)
                if table._place(keys, values):
                    table.size = n
                    table.reseeds = reseeds
                    table.growths = growth
                    return table
                reseeds += 1
                seeds_now = reseed(seeds_now, reseeds)
            capacity = 2 * table.capacity
        raise CuckooBuildError(f"could not place {n} keys after growth cap")

    @staticmethod
    def max_rounds(n: int) -> int:
        return int(32 * math.log2(max(n, 2)) + 8)

    def _buckets(self, keys: np.ndarray, t: int) -> np.ndarray:
        return (mix(keys, self.seeds[t]) & np.uint64(self.n_buckets - 1)).astype(np.int64)

    def _place(self, keys: np.ndarray, values: np.ndarray) -> bool:
        """Run displacement rounds until every key is seated.

        Returns False (table left in an undefined state) when the round
        budget is exhausted; the caller reseeds and retries from scratch.
        """
        pend_k, pend_v = keys, values
        pend_t = np.zeros(keys.size, dtype=np.int8)
        rounds = self.max_rounds(keys.size + self.size)
        for rnd in range(rounds):
            if pend_k.size == 0:
                return True
            nk, nv, nt = [], [], []
            for t in (0, 1):
                sel = pend_t == t
                if not sel.any():
                    continue
                k, v = pend_k[sel], pend_v[sel]
                b = self._buckets(k, t)
                order = np.argsort(b, kind="stable")
                k, v, b = k[order], v[order], b[order]
                uniq, first, counts = np.unique(b, return_index=True, return_counts=True)
                rank = np.arange(b.size) - np.repeat(first, counts)
                fill = self.fill[t, b]
                free = BUCKET_SLOTS - fill
                placed = rank < free
                slot = fill + rank
                self.keys[t, b[placed], slot[placed]] = k[placed]
                self.values[t, b[placed], slot[placed]] = v[placed]
                self.fill[t, uniq] = np.minimum(BUCKET_SLOTS, self.fill[t, uniq] + counts)

                over = ~placed
                if over.any():
                    ob, ok, ov = b[over], k[over], v[over]
                    excess = (rank - free)[over]
                    evicting = excess < BUCKET_SLOTS
                    eb = ob[evicting]
                    es = (excess[evicting] + rnd) % BUCKET_SLOTS
                    victims_k = self.keys[t, eb, es].copy()
                    victims_v = self.values[t, eb, es].copy()
                    self.keys[t, eb, es] = ok[evicting]
                    self.values[t, eb, es] = ov[evicting]
                    # victims and claimants that found no slot move to the other array
                    nk += [victims_k, ok[~evicting]]
                    nv += [victims_v, ov[~evicting]]
                    nt.append(np.full(victims_k.size + int((~evicting).sum()), 1 - t, dtype=np.int8))
            if nk:
                pend_k = np.concatenate(nk)
                pend_v = np.concatenate(nv)
                pend_t = np.concatenate(nt)
            else:
                pend_k = pend_k[:0]
        return pend_k.size == 0

    # ----------------------------------------------------------------- insert
    def insert(self, keys, values) -> None:
        """Insert or overwrite entries; rebuilds when load would exceed 0.5."""
        keys = np.ascontiguousarray(keys, dtype=np.uint64).ravel()
        values = np.ascontiguousarray(values, dtype=np.int64).ravel()
        if keys.size == 0:
            return
        # last write wins within a batch, like repeated dict assignment
        rev_u, rev_idx = np.unique(keys[::-1], return_index=True)
        keep = keys.size - 1 - rev_idx
        keys, values = keys[keep], values[keep]

        found, loc = self._locate(keys)
        if found.any():
            t, b, s = loc[:, 0][found], loc[:, 1][found], loc[:, 2][found]
            self.values[t, b, s] = values[found]
        keys, values = keys[~found], values[~found]
        if keys.size == 0:
            return
        if (self.size + keys.size) / self.capacity > 0.5 or not self._place_copy(keys, values):
            old_k, old_v = self.items()
            grown = CuckooTable.build(
                np.concatenate([old_k, keys]), np.concatenate([old_v, values]), self.seeds
            )
            self.__dict__.update(grown.__dict__)
            return
        self.size += keys.size

    def _place_copy(self, keys, values) -> bool:
        saved = (self.keys.copy(), self.values.copy(), self.fill.copy())
        if self._place(keys, values):
            return True
        self.keys, self.values, self.fill = saved
        return False

    def items(self) -> tuple[np.ndarray, np.ndarray]:
        occ = self.keys != EMPTY
        return self.keys[occ], self.values[occ]

    # ------------------------------------------------------------------ query
    def _locate(self, keys: np.ndarray):
        found = np.zeros(keys.size, dtype=bool)
        loc = np.zeros((keys.size, 3), dtype=np.int64)
        for t in (0, 1):
            b = self._buckets(keys, t)
            hit = self.keys[t, b] == keys[:, None]
            any_hit = hit.any(axis=1)
            new = any_hit & ~found
            loc[new, 0] = t
            loc[new, 1] = b[new]
            loc[new, 2] = hit[new].argmax(axis=1)
            found |= any_hit
        return found, loc

    def query(self, keys) -> tuple[np.ndarray, np.ndarray]:
        """Return (found, value) arrays; value is -1 where not found."""
        keys = np.ascontiguousarray(keys, dtype=np.uint64).ravel()
        values = np.full(keys.size, -1, dtype=np.int64)
        if keys.size == 0 or self.size == 0:
            return np.zeros(keys.size, dtype=bool), values
        found = np.zeros(keys.size, dtype=bool)
        _probe(keys, self.keys, self.values, np.uint64(self.seeds[0]), np.uint64(self.seeds[1]),
               np.uint64(self.n_buckets - 1), found, values)
        return found, values

    def get(self, key: int, default=None):
        found, v = self.query(np.array([key], dtype=np.uint64))
        return int(v[0]) if found[0] else default

    def __len__(self) -> int:
        return self.size

    def __contains__(self, key) -> bool:
        return bool(self.query(np.array([key], dtype=np.uint64))[0][0])

    @property
    def load_factor(self) -> float:
        return self.size / self.capacity


def cuckoo_build(keys, values=None, seeds: tuple[int, int] = DEFAULT_SEEDS) -> CuckooTable:
    return CuckooTable.build(keys, values, seeds)


def cuckoo_query_batch(table: CuckooTable, keys, workers: int = 1, chunk: int = 65536):
    """Batch lookup, optionally split over threads writing disjoint slices."""
    keys = np.ascontiguousarray(keys, dtype=np.uint64).ravel()
    if workers <= 1 or keys.size <= chunk:
        return table.query(keys)
    found = np.zeros(keys.size, dtype=bool)
    values = np.full(keys.size, -1, dtype=np.int64)

    def run(lo: int) -> None:
        hi = min(lo + chunk, keys.size)
        f, v = table.query(keys[lo:hi])
        found[lo:hi] = f
        values[lo:hi] = v

    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(run, range(0, keys.size, chunk)))
    return found, values
