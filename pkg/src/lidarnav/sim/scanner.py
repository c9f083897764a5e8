"""Synthetic 360 degree LiDAR: wall returns at three heights plus occluded ground rings."""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numba
import numpy as np

from ..geometry import PointCloud
from .track import Track
from .vehicle import VehicleState

FAILURE_KINDS = ("empty_cloud", "frozen_cloud")


@dataclass(frozen=True)
class FailureSchedule:
    """LiDAR failure for ``duration`` metres at the start of every ``period`` metres."""

    period: float = 50.0
    duration: float = 5.0
    kind: str = "empty_cloud"

    def __post_init__(self):
        if not (self.period > self.duration > 0):
            raise ValueError("require period > duration > 0")
        if self.kind not in FAILURE_KINDS:
            raise ValueError(f"unknown failure kind {self.kind!r}")

    def active(self, d: float) -> bool:
        return (d % self.period) < self.duration


@dataclass
class ScannerConfig:
    n_azimuth: int = 720
    max_range: float = 50.0
    sensor_height: float = 1.7
    wall_heights: tuple = (0.0, 0.2, 0.4)   # with the mount height, every row sits mid-voxel
    ground_rings: tuple = (4.0, 5.0, 6.5, 8.0, 10.0, 13.0, 17.0, 22.0)
    range_noise: float = 0.03
    wall_intensity: float = 1.0
    ground_intensity: float = 0.3


@dataclass
class Scanner:
    """Stateful wrapper remembering the last healthy scan for frozen-sensor failures."""

    config: ScannerConfig = field(default_factory=ScannerConfig)
    last_healthy: PointCloud | None = None

    def scan(self, track: Track, s: VehicleState, schedule: FailureSchedule | None,
             rng_seed) -> PointCloud:
        if schedule is not None and schedule.active(s.d):
            if schedule.kind == "empty_cloud" or self.last_healthy is None:
                return PointCloud(np.zeros((0, 4)))
            return PointCloud(self.last_healthy.points.copy())
        cloud = render_scan(track, s, rng_seed, self.config)
        self.last_healthy = cloud
        return cloud


@numba.njit(cache=True)
def _cast(dx, dy, seg, ox, oy, out):
    """Nearest positive ray parameter per ray against all segments (2D cross products)."""
    for j in range(seg.shape[0]):
        ax = seg[j, 0, 0] - ox
        ay = seg[j, 0, 1] - oy
        ex = seg[j, 1, 0] - seg[j, 0, 0]
        ey = seg[j, 1, 1] - seg[j, 0, 1]
        num_t = ax * ey - ay * ex
        for i in range(dx.size):
            denom = dx[i] * ey - dy[i] * ex
            if abs(denom) <= 1e-12:
                continue
            t = num_t / denom
            if t <= 0 or t >= out[i]:
                continue
            u = (ax * dy[i] - ay * dx[i]) / denom
            if 0.0 <= u <= 1.0:
                out[i] = t


def wall_ranges(track: Track, s: VehicleState, config: ScannerConfig) -> np.ndarray:
    """Horizontal range to the first wall along each azimuth (inf when nothing is hit)."""
    segs, tree = track.walls()
    near = tree.query_ball_point([s.x, s.y], config.max_range + track.wall_spacing)
    rng = np.full(config.n_azimuth, np.inf)
    if not near:
        return rng
    seg = np.ascontiguousarray(segs[np.asarray(near)])
    az = s.psi + np.arange(config.n_azimuth) * (2 * math.pi / config.n_azimuth)
    _cast(np.cos(az), np.sin(az), seg, s.x, s.y, rng)
    rng[rng > config.max_range] = np.inf
    return rng


def render_scan(track: Track, s: VehicleState, rng_seed, config: ScannerConfig = ScannerConfig()) -> PointCloud:
    """Noisy sensor-frame points of walls and visible ground."""
    rng = np.random.default_rng(rng_seed)
    hit = wall_ranges(track, s, config)
    phi = np.arange(config.n_azimuth) * (2 * math.pi / config.n_azimuth)
    parts = []
    ok = np.isfinite(hit)
    for h in config.wall_heights:
        r = hit[ok] + rng.normal(0.0, config.range_noise, ok.sum())
        z = np.full(r.size, h - config.sensor_height)
        parts.append(np.stack([r * np.cos(phi[ok]), r * np.sin(phi[ok]), z,
                               np.full(r.size, config.wall_intensity)], axis=1))
    for ring in config.ground_rings:
        vis = (ring < hit) & (ring <= config.max_range)
        r = ring + rng.normal(0.0, config.range_noise, vis.sum())
        z = np.full(r.size, -config.sensor_height)
        parts.append(np.stack([r * np.cos(phi[vis]), r * np.sin(phi[vis]), z,
                               np.full(r.size, config.ground_intensity)], axis=1))
    return PointCloud(np.concatenate(parts, axis=0))


def scan(track: Track, s: VehicleState, schedule: FailureSchedule | None, rng_seed,
         scanner: Scanner | None = None) -> PointCloud:
    """Functional form; pass a ``Scanner`` to keep frozen-cloud memory across ticks."""
    return (scanner or Scanner()).scan(track, s, schedule, rng_seed)
