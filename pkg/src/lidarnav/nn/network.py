"""Fast-LiDARNet style backbone with map branch and deterministic/evidential heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
import json

import numpy as np

from ..sparse.hashing import CuckooTable, pack_coords
from ..sparse.kernel_map import KernelMap, build_kernel_map
from . import layers as L

# clouds in one batch are placed side by side along x, this many voxels apart;
# a multiple of 2**levels keeps them separated after every stride-2 conv
BATCH_SPACING = 1024


@dataclass
class ArchConfig:
    in_channels: int = 5
    stem_channels: int = 16
    block_channels: tuple = (16, 16, 32, 64)
    down_channels: tuple = (16, 32, 64, 64)
    kernel_size: int = 3
    map_channels: tuple = (2, 8, 16)
    map_size: int = 64
    trunk_channels: int = 64
    K: int = 10
    evidential: bool = True
    use_map: bool = False
    trunk_bias: bool = False
    evidence_bias: bool = False

    def __post_init__(self):
        self.block_channels = tuple(self.block_channels)
        self.down_channels = tuple(self.down_channels)
        self.map_channels = tuple(self.map_channels)
        if len(self.block_channels) != len(self.down_channels):
            raise ValueError("need one downsampling conv per block")
        widths = (self.stem_channels,) + self.down_channels[:-1]
        for w_in, w_block in zip(widths, self.block_channels):
            if w_in != w_block:
                raise ValueError(f"block width {w_block} does not match incoming width {w_in}")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")

    @property
    def lidar_dim(self) -> int:
        return self.down_channels[-1]

    @property
    def map_dim(self) -> int:
        return 2 * self.map_channels[-1]

    @property
    def volume(self) -> int:
        return self.kernel_size ** 3

    def to_text(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_text(cls, text: str) -> "ArchConfig":
        return cls(**json.loads(text))


@dataclass
class NetworkOutput:
    x: np.ndarray               # (K,) deterministic curvature predictions
    e: np.ndarray | None        # (K, 4) raw evidential pre-activations


def sparse_layers(cfg: ArchConfig) -> list[tuple[str, int, int, int]]:
    """(name, c_in, c_out, stride) for every sparse conv, in execution order."""
    out = [("stem", cfg.in_channels, cfg.stem_channels, 1)]
    w_in = cfg.stem_channels
    for i, (wb, wd) in enumerate(zip(cfg.block_channels, cfg.down_channels)):
        out.append((f"block{i}.conv1", wb, wb, 1))
        out.append((f"block{i}.conv2", wb, wb, 1))
        out.append((f"down{i}", wb, wd, 2))
        w_in = wd
    return out


def param_specs(cfg: ArchConfig) -> list[tuple[str, tuple]]:
    """Parameter names and shapes in declaration (checkpoint) order."""
    specs: list[tuple[str, tuple]] = []
    v = cfg.volume
    for name, cin, cout, _ in sparse_layers(cfg):
        specs += [(f"{name}.w", (v, cin, cout)), (f"{name}.b", (cout,)),
                  (f"{name}.bn.gamma", (cout,)), (f"{name}.bn.beta", (cout,))]
    m0, m1, m2 = cfg.map_channels
    specs += [("map.conv1.w", (3, 3, m0, m1)), ("map.conv1.b", (m1,)),
              ("map.conv2.w", (3, 3, m1, m2)), ("map.conv2.b", (m2,))]
    d_in = cfg.lidar_dim + cfg.map_dim
    specs.append(("trunk.w", (d_in, cfg.trunk_channels)))
    if cfg.trunk_bias:
        specs.append(("trunk.b", (cfg.trunk_channels,)))
    specs += [("head_x.w", (cfg.trunk_channels, cfg.K)), ("head_x.b", (cfg.K,))]
    if cfg.evidential:
        specs.append(("head_e.w", (cfg.trunk_channels, 4 * cfg.K)))
        if cfg.evidence_bias:
            specs.append(("head_e.b", (4 * cfg.K,)))
    return specs


def state_specs(cfg: ArchConfig) -> list[tuple[str, tuple]]:
    return [(f"{name}.bn.{s}", (cout,)) for name, _, cout, _ in sparse_layers(cfg)
            for s in ("mean", "var")]


def init_params(cfg: ArchConfig, seed: int = 0, dtype=np.float32):
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_specs(cfg):
        if name.endswith(".bn.gamma"):
            arr = np.ones(shape)
        elif name.endswith((".b", ".bn.beta")):
            arr = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[:-1]))
            std = np.sqrt(2.0 / fan_in)
            if name.startswith("head_"):
                std = 0.1 / np.sqrt(fan_in)
            arr = rng.normal(0.0, std, size=shape)
        params[name] = arr.astype(dtype)
    state = {name: (np.zeros(shape) if name.endswith(".mean") else np.ones(shape)).astype(dtype)
             for name, shape in state_specs(cfg)}
    return params, state


def batch_coordinates(coords_list: list[np.ndarray]):
    """Concatenate per-cloud coordinates, shifting cloud b by b * BATCH_SPACING along x."""
    half = BATCH_SPACING // 2
    parts, batch = [], []
    for b, c in enumerate(coords_list):
        if c.shape[0] and (np.abs(c[:, 0]).max() >= half - 2):
            raise ValueError(f"cloud extent exceeds +/-{half - 2} voxels along x")
        shifted = c.copy()
        shifted[:, 0] += b * BATCH_SPACING
        parts.append(shifted)
        batch.append(np.full(c.shape[0], b, dtype=np.int64))
    return np.concatenate(parts), np.concatenate(batch)


def batch_ids(coords: np.ndarray, level: int) -> np.ndarray:
    """Cloud index of each site at downsampling ``level``."""
    return (coords[:, 0] * (1 << level) + BATCH_SPACING // 2) // BATCH_SPACING


class FastLiDARNet:
    """Sparse residual backbone + dense map branch + fused heads.

    Parameters live in ``params`` (name -> array, declaration order);
    batch-norm running statistics live in ``state``.
    """

    def __init__(self, cfg: ArchConfig | None = None, seed: int = 0, dtype=np.float32,
                 params=None, state=None):
        self.cfg = cfg or ArchConfig()
        if params is None:
            params, fresh_state = init_params(self.cfg, seed, dtype)
            state = state if state is not None else fresh_state
        self.params = params
        self.state = state
        self.workers = 1

    # ------------------------------------------------------------------ helpers
    def astype(self, dtype) -> "FastLiDARNet":
        params = {k: v.astype(dtype) for k, v in self.params.items()}
        state = {k: v.astype(dtype) for k, v in self.state.items()}
        net = FastLiDARNet(self.cfg, params=params, state=state)
        net.workers = self.workers
        return net

    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def _conv(self, name, x, km):
        p = self.params
        return L.sparse_conv_forward(x, km, p[f"{name}.w"], p[f"{name}.b"], self.workers)

    def _bn(self, name, x, training):
        p, s = self.params, self.state
        return L.batchnorm_fwd(x, p[f"{name}.bn.gamma"], p[f"{name}.bn.beta"],
                               s[f"{name}.bn.mean"], s[f"{name}.bn.var"], training)

    # ------------------------------------------------------------------ forward
    def forward(self, coords_list, feats_list, maps=None, training: bool = False,
                allow_empty: bool = False):
        """Run a batch of clouds.

        Returns ``(x, e, cache)`` with ``x`` of shape (B, K) and ``e`` of shape
        (B, K, 4) or None when the evidential head is disabled.  Empty clouds
        raise unless ``allow_empty``; then they pool to a zero LiDAR feature.
        """
        cfg, p = self.cfg, self.params
        B = len(coords_list)
        dtype = p["stem.w"].dtype
        empty = [c.shape[0] == 0 for c in coords_list]
        if any(empty) and not allow_empty:
            raise ValueError("empty point cloud passed to the network")
        cache: dict = {"B": B, "stats": [], "training": training}

        lidar = np.zeros((B, cfg.lidar_dim), dtype=dtype)
        if not all(empty):
            coords, batch = batch_coordinates(list(coords_list))
            x = np.concatenate([np.asarray(f, dtype=dtype) for f in feats_list], axis=0)
            if x.shape[1] != cfg.in_channels:
                raise ValueError(f"expected {cfg.in_channels} input channels, got {x.shape[1]}")
            lidar, cache["backbone"] = self._backbone_forward(coords, x, B, training)
        cache["empty"] = empty

        if cfg.use_map and maps is not None:
            mfeat, cache["map"] = self._map_forward(np.asarray(maps, dtype=dtype))
        else:
            mfeat = np.zeros((B, cfg.map_dim), dtype=dtype)
            cache["map"] = None

        z = np.concatenate([lidar, mfeat], axis=1)
        hpre = L.dense_fwd(z, p["trunk.w"], p.get("trunk.b"))
        h = L.relu_fwd(hpre)
        xout = L.dense_fwd(h, p["head_x.w"], p["head_x.b"])
        e = None
        if cfg.evidential:
            e = L.dense_fwd(h, p["head_e.w"], p.get("head_e.b")).reshape(B, cfg.K, 4)
        cache.update(z=z, hpre=hpre, h=h)
        return xout, e, cache

    def _backbone_forward(self, coords, x, B, training):
        cfg = self.cfg
        bc: dict = {"levels": []}
        table = CuckooTable.build(pack_coords(coords))
        km = build_kernel_map(coords, cfg.kernel_size, 1, table)
        self._stat("stem", km, cfg.in_channels, cfg.stem_channels, bc)
        h = self._conv("stem", x, km)
        a, bn_c = self._bn("stem", h, training)
        out = L.relu_fwd(a)
        bc["stem"] = (x, km, bn_c, a)
        x = out
        for i in range(len(cfg.block_channels)):
            lv: dict = {"km": km}
            h1 = self._conv(f"block{i}.conv1", x, km)
            a1, bn1 = self._bn(f"block{i}.conv1", h1, training)
            r1 = L.relu_fwd(a1)
            h2 = self._conv(f"block{i}.conv2", r1, km)
            a2, bn2 = self._bn(f"block{i}.conv2", h2, training)
            s = a2 + x
            out = L.relu_fwd(s)
            w = cfg.block_channels[i]
            self._stat(f"block{i}.conv1", km, w, w, bc)
            self._stat(f"block{i}.conv2", km, w, w, bc)
            lv.update(x=x, a1=a1, bn1=bn1, r1=r1, bn2=bn2, s=s)

            kmd = build_kernel_map(km.in_coords, cfg.kernel_size, 2, table)
            self._stat(f"down{i}", kmd, w, cfg.down_channels[i], bc)
            hd = self._conv(f"down{i}", out, kmd)
            ad, bnd = self._bn(f"down{i}", hd, training)
            x = L.relu_fwd(ad)
            lv.update(block_out=out, kmd=kmd, bnd=bnd, ad=ad)
            bc["levels"].append(lv)
            coords = kmd.out_coords
            if i + 1 < len(cfg.block_channels):
                table = CuckooTable.build(pack_coords(coords))
                km = build_kernel_map(coords, cfg.kernel_size, 1, table)
        level = len(cfg.block_channels)
        batch = batch_ids(coords, level)
        pooled, pool_c = L.global_avg_pool_fwd(x, batch, B)
        bc["pool"] = pool_c
        return pooled, bc

    @staticmethod
    def _stat(name, km: KernelMap, cin, cout, bc):
        bc.setdefault("stats", []).append(
            {"name": name, "n_in": km.n_in, "n_out": km.n_out, "pairs": km.n_pairs,
             "c_in": cin, "c_out": cout})

    def _map_forward(self, maps):
        p = self.params
        h1, c1 = L.conv2d_fwd(maps, p["map.conv1.w"], p["map.conv1.b"])
        r1 = L.relu_fwd(h1)
        h2, c2 = L.conv2d_fwd(r1, p["map.conv2.w"], p["map.conv2.b"])
        r2 = L.relu_fwd(h2)
        pooled, shape = L.half_pool_fwd(r2)
        return pooled, (c1, h1, c2, h2, shape)

    # ------------------------------------------------------------------ backward
    def backward(self, cache, dx: np.ndarray, de: np.ndarray | None = None) -> dict:
        """Gradients of a scalar loss given dL/dx (B, K) and dL/de (B, K, 4)."""
        cfg, p = self.cfg, self.params
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        h, z = cache["h"], cache["z"]
        dx = np.asarray(dx, dtype=h.dtype)
        dh, grads["head_x.w"], grads["head_x.b"] = L.dense_bwd(h, p["head_x.w"], dx)
        if cfg.evidential and de is not None:
            de2 = np.asarray(de, dtype=h.dtype).reshape(h.shape[0], -1)
            dh_e, grads["head_e.w"], db = L.dense_bwd(h, p["head_e.w"], de2, cfg.evidence_bias)
            if cfg.evidence_bias:
                grads["head_e.b"] = db
            dh = dh + dh_e
        dhpre = L.relu_bwd(cache["hpre"], dh)
        dz, grads["trunk.w"], db = L.dense_bwd(z, p["trunk.w"], dhpre, cfg.trunk_bias)
        if cfg.trunk_bias:
            grads["trunk.b"] = db
        dlidar, dmap = dz[:, :cfg.lidar_dim], dz[:, cfg.lidar_dim:]
        if cache["map"] is not None:
            self._map_backward(dmap, cache["map"], grads)
        if "backbone" in cache:
            self._backbone_backward(dlidar, cache["backbone"], grads)
        return grads

    def _conv_bwd(self, name, dy, x, km, grads):
        dx, grads[f"{name}.w"], grads[f"{name}.b"] = L.sparse_conv_backward(
            dy, x, km, self.params[f"{name}.w"], self.workers)
        return dx

    def _bn_bwd(self, name, dy, bn_cache, grads):
        dx, grads[f"{name}.bn.gamma"], grads[f"{name}.bn.beta"] = L.batchnorm_bwd(dy, bn_cache)
        return dx

    def _backbone_backward(self, dpooled, bc, grads):
        dx = L.global_avg_pool_bwd(dpooled, bc["pool"])
        for i in reversed(range(len(self.cfg.block_channels))):
            lv = bc["levels"][i]
            dad = L.relu_bwd(lv["ad"], dx)
            dhd = self._bn_bwd(f"down{i}", dad, lv["bnd"], grads)
            dout = self._conv_bwd(f"down{i}", dhd, lv["block_out"], lv["kmd"], grads)
            ds = L.relu_bwd(lv["s"], dout)
            dh2 = self._bn_bwd(f"block{i}.conv2", ds, lv["bn2"], grads)
            dr1 = self._conv_bwd(f"block{i}.conv2", dh2, lv["r1"], lv["km"], grads)
            da1 = L.relu_bwd(lv["a1"], dr1)
            dh1 = self._bn_bwd(f"block{i}.conv1", da1, lv["bn1"], grads)
            dx = ds + self._conv_bwd(f"block{i}.conv1", dh1, lv["x"], lv["km"], grads)
        x_in, km, bn_c, a = bc["stem"]
        da = L.relu_bwd(a, dx)
        dh = self._bn_bwd("stem", da, bn_c, grads)
        self._conv_bwd("stem", dh, x_in, km, grads)

    def _map_backward(self, dpooled, mc, grads):
        c1, h1, c2, h2, shape = mc
        p = self.params
        dr2 = L.half_pool_bwd(dpooled, shape)
        dh2 = L.relu_bwd(h2, dr2)
        dr1, grads["map.conv2.w"], grads["map.conv2.b"] = L.conv2d_bwd(dh2, p["map.conv2.w"], c2)
        dh1 = L.relu_bwd(h1, dr1)
        _, grads["map.conv1.w"], grads["map.conv1.b"] = L.conv2d_bwd(dh1, p["map.conv1.w"], c1)

    # ------------------------------------------------------------------ inference
    def predict(self, vox, raster=None, allow_empty: bool = True) -> NetworkOutput:
        """Single-frame inference with running batch-norm statistics."""
        maps = None
        if raster is not None:
            grid = raster.grid if hasattr(raster, "grid") else raster
            maps = np.asarray(grid)[None]
        x, e, _ = self.forward([vox.coords], [vox.features], maps, training=False,
                               allow_empty=allow_empty)
        return NetworkOutput(x[0].astype(np.float64), None if e is None else e[0].astype(np.float64))


def fast_lidarnet_forward(cloud, raster, net: FastLiDARNet, mode: str = "lidar-only") -> NetworkOutput:
    """Functional entry point: one voxelized cloud (+ optional raster) -> NetworkOutput.

    ``mode`` is "lidar-only" (map feature forced to zero) or "navigation".
    """
    if len(cloud) == 0:
        raise ValueError("empty point cloud")
    if mode not in ("lidar-only", "navigation"):
        raise ValueError(f"unknown mode {mode!r}")
    maps = None
    if mode == "navigation" and raster is not None and net.cfg.use_map:
        maps = np.asarray(raster.grid)[None]
    x, e, _ = net.forward([cloud.coords], [cloud.features], maps, training=False)
    return NetworkOutput(x[0].astype(np.float64), None if e is None else e[0].astype(np.float64))


@dataclass
class LayerCount:
    name: str
    params: int
    macs: int


@dataclass
class Accounting:
    params: int
    macs: int
    layers: list[LayerCount] = field(default_factory=list)


def count_params_macs(cfg: ArchConfig, layer_stats: list[dict] | None) -> Accounting:
    """Parameter and multiply-accumulate totals.

    ``layer_stats`` carries the per-sparse-layer pair counts recorded by a
    real forward pass (``cache["backbone"]["stats"]``); sparse MACs are
    pairs x C_in x C_out.  Dense layers and the map branch are counted
    analytically.  With ``None`` the sparse layers contribute no MACs.
    """
    specs = dict(param_specs(cfg))
    layers = []
    by_name = {s["name"]: s for s in (layer_stats or [])}
    for name, cin, cout, _ in sparse_layers(cfg):
        n_par = sum(int(np.prod(specs[f"{name}.{t}"])) for t in ("w", "b", "bn.gamma", "bn.beta"))
        macs = by_name[name]["pairs"] * cin * cout if name in by_name else 0
        layers.append(LayerCount(name, n_par, macs))
    m0, m1, m2 = cfg.map_channels
    s1 = cfg.map_size // 2
    s2 = s1 // 2
    layers.append(LayerCount("map.conv1", 9 * m0 * m1 + m1, s1 * s1 * 9 * m0 * m1 if cfg.use_map else 0))
    layers.append(LayerCount("map.conv2", 9 * m1 * m2 + m2, s2 * s2 * 9 * m1 * m2 if cfg.use_map else 0))
    layers.append(dense_count("trunk", cfg.lidar_dim + cfg.map_dim, cfg.trunk_channels, cfg.trunk_bias))
    layers.append(dense_count("head_x", cfg.trunk_channels, cfg.K, True))
    if cfg.evidential:
        layers.append(dense_count("head_e", cfg.trunk_channels, 4 * cfg.K, cfg.evidence_bias))
    return Accounting(sum(l.params for l in layers), sum(l.macs for l in layers), layers)


def dense_count(name: str, c_in: int, c_out: int, bias: bool = True) -> LayerCount:
    return LayerCount(name, c_in * c_out + (c_out if bias else 0), c_in * c_out)


def sparse_conv_count(name: str, pairs: int, c_in: int, c_out: int, volume: int = 27) -> LayerCount:
    return LayerCount(name, volume * c_in * c_out + c_out, pairs * c_in * c_out)
