"""Minibatch training: augmentation, hybrid loss, AdamW with cosine schedule, metrics log."""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .evidential import LossWeights, constrain, loss_gradients, loss_terms
from .geometry import (D_RECOVER, MAX_YAW, NEAR_RADIUS, SCALE_RANGE, VOXEL_SIZE, augment,
                       augment_map, filter_near, quantize, render_map)
from .nn.network import ArchConfig, FastLiDARNet

DEFAULT_EPOCHS = 250
DEFAULT_BATCH = 64
MODES = ("deterministic", "hybrid")


@dataclass
class TrainConfig:
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH
    lr0: float = 3e-3
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 1e-4
    eps: float = 1e-8
    seed: int = 0
    K: int = 10
    mode: str = "hybrid"
    navigation: bool = False
    rotate: bool = True
    scale: bool = True
    max_yaw: float = MAX_YAW
    d_recover: float = D_RECOVER
    alpha_loss: float = 1000.0
    sigma_scale: float = 1.0 / 15.0
    voxel_size: float = VOXEL_SIZE
    near_radius: float = NEAR_RADIUS
    position_features: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        for name in ("epochs", "batch_size", "lr0", "K", "voxel_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0 or not (0 <= self.betas[0] < 1 and 0 <= self.betas[1] < 1):
            raise ValueError("invalid optimizer settings")

    def arch(self) -> ArchConfig:
        return ArchConfig(in_channels=5 if self.position_features else 3, K=self.K,
                          evidential=self.mode == "hybrid", use_map=self.navigation)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha_loss, self.sigma_scale)


def cosine_lr(epoch: float, config: TrainConfig) -> float:
    if not 0 <= epoch <= config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs}]")
    return max(0.0, 0.5 * config.lr0 * (1.0 + math.cos(math.pi * epoch / config.epochs)))


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict, grads: dict, state: OptimizerState, lr: float, config: TrainConfig):
    """Bias-corrected Adam with decoupled weight decay, applied in place.

    Non-finite gradients raise before any parameter is touched.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    b1, b2 = config.betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name].astype(p.dtype, copy=False)
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + config.eps)
        if config.weight_decay:
            p -= (lr * config.weight_decay) * p
        p -= (lr * update).astype(p.dtype)
    return params, state


# ---------------------------------------------------------------------------- data
def select_frames(frames, navigation: bool):
    """LiDAR-only models train on lane-stable frames; navigation models use all frames."""
    if navigation:
        return list(frames)
    return [f for f in frames if f.meta.tag == "lane-stable"]


class _TrackCache(dict):
    def __missing__(self, name):
        from .sim.track import make_track
        self[name] = make_track(name)
        return self[name]


def prepare(frame, config: TrainConfig, seed, augment_data: bool = True, tracks=None):
    """Filter, augment, voxelize one frame; returns (coords, features, labels, raster or None)."""
    cloud = filter_near(frame.cloud, config.near_radius)
    y = frame.labels
    if augment_data and (config.rotate or config.scale):
        cloud, y, _ = augment(cloud, y, [*seed, 1], rotate=config.rotate, scale=config.scale,
                              max_yaw=config.max_yaw, d_recover=config.d_recover)
    vox = quantize(cloud, config.voxel_size, position_features=config.position_features)
    raster = None
    if config.navigation:
        m = frame.meta
        pose, flags = (m.x, m.y, m.psi), {"blackout": False, "drop_route": False}
        if augment_data:
            pose, flags = augment_map(pose, m.tag == "lane-stable", [*seed, 2])
        track = (tracks if tracks is not None else _TrackCache())[m.track]
        raster = render_map(track, True, pose, blackout=flags["blackout"],
                            drop_route=flags["drop_route"]).grid
    return vox.coords, vox.features, y, raster


def evaluate(net: FastLiDARNet, frames, config: TrainConfig, tracks=None) -> dict:
    """Inference-mode curvature MAE (deterministic head) over unaugmented frames."""
    tracks = tracks if tracks is not None else _TrackCache()
    errs = []
    for i, fr in enumerate(frames):
        coords, feats, y, raster = prepare(fr, config, (0, i), augment_data=False, tracks=tracks)
        maps = None if raster is None else raster[None]
        x, _, _ = net.forward([coords], [feats], maps, training=False)
        errs.append(np.abs(x[0].astype(np.float64) - y))
    errs = np.array(errs)
    return {"mae": float(errs.mean()), "mae_k0": float(errs[:, 0].mean())}


@dataclass
class TrainResult:
    net: FastLiDARNet
    history: list
    optimizer: OptimizerState
    n_frames: int


def format_metrics(row: dict) -> str:
    return "\t".join([str(row["epoch"]), f"{row['lr']:.6e}", f"{row['loss_total']:.6f}",
                      f"{row['loss_mae']:.6f}", f"{row['loss_nll']:.6f}", f"{row['loss_r']:.6f}"])


def train(frames, config: TrainConfig, log=None, arch: ArchConfig | None = None) -> TrainResult:
    """Train from scratch; ``log`` (a callable taking a line) receives one metrics line per epoch."""
    frames = select_frames(frames, config.navigation)
    if not frames:
        raise ValueError("no frames selected for training")
    for fr in frames:
        if fr.labels.size != config.K:
            raise ValueError(f"frame has {fr.labels.size} labels, config expects K={config.K}")
    arch = arch or config.arch()
    net = FastLiDARNet(arch, seed=config.seed)
    opt = OptimizerState()
    rng = np.random.default_rng(config.seed)
    tracks = _TrackCache()
    weights = config.weights
    history = []
    n = len(frames)
    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config)
        order = rng.permutation(n)
        sums = {"mae": 0.0, "nll": 0.0, "r": 0.0, "abs_err": 0.0}
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = [prepare(frames[i], config, (config.seed, epoch, int(i)), True, tracks) for i in idx]
            maps = np.stack([b[3] for b in batch]) if config.navigation else None
            x, e, cache = net.forward([b[0] for b in batch], [b[1] for b in batch], maps, training=True)
            y = np.stack([b[2] for b in batch])
            x64 = x.astype(np.float64)
            e64 = None if e is None else e.astype(np.float64)
            _, dx, de = loss_gradients(x64, e64, y, weights)
            t = loss_terms(x64, None if e64 is None else constrain(e64), y, weights)
            for k in ("mae", "nll", "r"):
                sums[k] += t[k]
            sums["abs_err"] += float(np.abs(x64 - y).sum())
            b = len(idx)
            grads = net.backward(cache, dx / b, None if de is None else de / b)
            adam_step(net.params, grads, opt, lr, config)
        row = {"epoch": epoch, "lr": lr, "loss_mae": sums["mae"] / n, "loss_nll": sums["nll"] / n,
               "loss_r": sums["r"] / n, "curvature_mae": sums["abs_err"] / (n * config.K)}
        row["loss_total"] = row["loss_mae"] + row["loss_nll"] + row["loss_r"]
        if not math.isfinite(row["loss_total"]):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}")
        history.append(row)
        if log is not None:
            log(format_metrics(row))
    return TrainResult(net, history, opt, n)
