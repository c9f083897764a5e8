"""Point-cloud preparation, augmentation, control labels and routed-map rasters."""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .sparse.hashing import pack_coords

VOXEL_SIZE = 0.2
NEAR_RADIUS = 3.0
Z_MIN = -2.0
Z_RANGE = 4.0
XY_SCALE = 20.0
KAPPA_MAX = 0.3
D_RECOVER = 20.0
SCALE_RANGE = (0.95, 1.05)
MAX_YAW = math.radians(10.0)
MAP_SIZE = 64
MAP_RESOLUTION = 1.0
MIN_SPEED = 1.0


class FrameRejected(ValueError):
    """A frame cannot be labeled (e.g. lookahead runs past the recorded trajectory)."""


@dataclass
class PointCloud:
    """Sensor-frame points, rows of (x, y, z, intensity); x forward, y left, z up."""

    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        if p.size == 0:
            p = p.reshape(0, 4)
        if p.ndim != 2 or p.shape[1] != 4:
            raise ValueError(f"points must be (n, 4), got {p.shape}")
        self.points = p

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    def validate(self) -> None:
        if not np.all(np.isfinite(self.points)):
            raise ValueError("non-finite point coordinates")
        if np.any((self.intensity < 0) | (self.intensity > 1)):
            raise ValueError("intensity outside [0, 1]")


@dataclass
class VoxelizedCloud:
    """Unique integer voxel coordinates with per-voxel features.

    Feature channels: occupancy (always 1), mean normalized height, mean
    intensity, and, when requested, mean x and y scaled by ``XY_SCALE``.
    """

    coords: np.ndarray
    features: np.ndarray
    voxel_size: float

    def __len__(self) -> int:
        return self.coords.shape[0]


@dataclass
class RoutedMapRaster:
    """Ego-centred bird's-eye raster, channels (road, route); row 0 is furthest ahead."""

    grid: np.ndarray  # (H, W, 2) float32 in {0, 1}
    resolution: float
    pose: tuple[float, float, float]
    flags: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------- cloud ops
def filter_near(cloud: PointCloud, radius: float = NEAR_RADIUS) -> PointCloud:
    """Keep points whose horizontal range is at least ``radius``."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    p = cloud.points
    keep = np.hypot(p[:, 0], p[:, 1]) >= radius
    return PointCloud(p[keep])


def quantize(cloud: PointCloud, voxel_size: float = VOXEL_SIZE, z_min: float = Z_MIN,
             z_range: float = Z_RANGE, position_features: bool = False,
             xy_scale: float = XY_SCALE) -> VoxelizedCloud:
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    n_feat = 5 if position_features else 3
    p = cloud.points
    if p.shape[0] == 0:
        return VoxelizedCloud(np.zeros((0, 3), np.int64), np.zeros((0, n_feat), np.float32), voxel_size)
    coords = np.floor(p[:, :3] / voxel_size).astype(np.int64)
    keys = pack_coords(coords)
    uniq, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    counts = np.bincount(inverse).astype(np.float64)
    feats = np.empty((uniq.size, n_feat), dtype=np.float64)
    feats[:, 0] = 1.0
    feats[:, 1] = np.bincount(inverse, weights=(p[:, 2] - z_min) / z_range) / counts
    feats[:, 2] = np.bincount(inverse, weights=p[:, 3]) / counts
    if position_features:
        feats[:, 3] = np.bincount(inverse, weights=p[:, 0] / xy_scale) / counts
        feats[:, 4] = np.bincount(inverse, weights=p[:, 1] / xy_scale) / counts
    return VoxelizedCloud(coords[first], feats.astype(np.float32), voxel_size)


def voxel_centers(vox: VoxelizedCloud) -> np.ndarray:
    return (vox.coords + 0.5) * vox.voxel_size


def rotate_z(xyz: np.ndarray, theta: float) -> np.ndarray:
    """Counter-clockwise yaw rotation about the z axis."""
    c, s = math.cos(theta), math.sin(theta)
    out = xyz.copy()
    out[:, 0] = c * xyz[:, 0] - s * xyz[:, 1]
    out[:, 1] = s * xyz[:, 0] + c * xyz[:, 1]
    return out


# ---------------------------------------------------------------------------- labels
def correct_labels(labels, theta: float, d_recover: float = D_RECOVER,
                   kappa_max: float = KAPPA_MAX) -> np.ndarray:
    """Steer a vehicle whose heading is offset by ``theta`` (CCW) back within ``d_recover``.

    The correction -2 theta / d_recover decays linearly to zero at lookahead
    ``d_recover``; its integral over the decay window undoes the heading offset.
    """
    if d_recover <= 0:
        raise ValueError("d_recover must be positive")
    y = np.asarray(labels, dtype=np.float64)
    k = np.arange(y.size, dtype=np.float64)
    decay = np.maximum(0.0, 1.0 - k / d_recover)
    return np.clip(y + (-2.0 * theta / d_recover) * decay, -kappa_max, kappa_max)


def augment(cloud: PointCloud, labels, rng_seed, *, rotate: bool = True, scale: bool = True,
            scale_range=SCALE_RANGE, max_yaw: float = MAX_YAW, d_recover: float = D_RECOVER,
            kappa_max: float = KAPPA_MAX, force_theta: float | None = None,
            force_scale: float | None = None):
    """Random scale then yaw rotation; returns (cloud, corrected labels, theta).

    Rotating the cloud by +theta is what the sensor would see with the vehicle
    yawed by -theta relative to the road, so labels are corrected for a
    heading offset of -theta.
    """
    rng = np.random.default_rng(rng_seed)
    s = rng.uniform(*scale_range) if scale else 1.0
    theta = rng.uniform(-max_yaw, max_yaw) if rotate else 0.0
    if force_scale is not None:
        s = force_scale
    if force_theta is not None:
        theta = force_theta
    p = cloud.points.copy()
    p[:, :3] *= s
    if theta != 0.0:
        p[:, :3] = rotate_z(p[:, :3], theta)
    y = np.asarray(labels, dtype=np.float64)
    if theta != 0.0:
        y = correct_labels(y, -theta, d_recover, kappa_max)
    return PointCloud(p), y, theta


def curvature_labels(trajectory, K: int = 10, d_current: float | None = None) -> np.ndarray:
    """Future curvatures y_k = (yaw rate / speed) interpolated at d_current + k.

    ``trajectory`` rows are (distance, yaw_rate, speed).
    """
    tr = np.asarray(trajectory, dtype=np.float64).reshape(-1, 3)
    d, yaw_rate, speed = tr[:, 0], tr[:, 1], tr[:, 2]
    if tr.shape[0] < 2 or np.any(np.diff(d) <= 0):
        raise ValueError("trajectory distances must be strictly increasing")
    if np.any(speed <= MIN_SPEED):
        raise ValueError("trajectory contains low-speed samples (<= 1 m/s)")
    d0 = d[0] if d_current is None else d_current
    look = d0 + np.arange(K, dtype=np.float64)
    if look[0] < d[0] or look[-1] > d[-1] + 1e-9:
        raise FrameRejected(f"lookahead {look[-1]:.2f} m beyond trajectory end {d[-1]:.2f} m")
    return np.interp(look, d, yaw_rate / speed)


# ---------------------------------------------------------------------------- maps
def ego_grid(H: int, W: int, resolution: float) -> np.ndarray:
    """Ego-frame (forward, left) coordinates of pixel centres, shape (H, W, 2)."""
    rows = (H / 2 - np.arange(H) - 0.5) * resolution
    cols = (W / 2 - np.arange(W) - 0.5) * resolution
    fwd, left = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([fwd, left], axis=-1)


def render_map(track, route: bool, pose, H: int = MAP_SIZE, W: int = MAP_SIZE,
               resolution: float = MAP_RESOLUTION, *, blackout: bool = False,
               drop_route: bool = False, max_range: float = 100.0) -> RoutedMapRaster:
    """Rasterize the track roads (and the designated route) around ``pose``.

    ``track`` must provide ``road_distance(points)`` and
    ``route_distance(points)``, returning distances to the nearest road /
    route centerline, and ``half_width``.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    x, y, psi = (float(v) for v in pose)
    grid = np.zeros((H, W, 2), dtype=np.float32)
    flags = {"blackout": bool(blackout), "drop_route": bool(drop_route)}
    raster = RoutedMapRaster(grid, resolution, (x, y, psi), flags)
    if blackout:
        return raster
    if track.road_distance(np.array([[x, y]]))[0] > max_range:
        return raster
    ego = ego_grid(H, W, resolution).reshape(-1, 2)
    c, s = math.cos(psi), math.sin(psi)
    world = np.empty_like(ego)
    world[:, 0] = x + c * ego[:, 0] - s * ego[:, 1]
    world[:, 1] = y + s * ego[:, 0] + c * ego[:, 1]
    road = track.road_distance(world) <= track.half_width
    grid[:, :, 0] = road.reshape(H, W)
    if route and not drop_route:
        on_route = road & (track.route_distance(world) <= track.half_width)
        grid[:, :, 1] = on_route.reshape(H, W)
    return raster


def augment_map(pose, lane_stable: bool, rng_seed, *, sigma_xy: float = 3.0,
                sigma_yaw: float = math.pi / 20, p_blackout: float = 0.25,
                p_drop_route: float = 0.25):
    """Perturb the map pose and draw blackout / route-drop flags.

    Route dropping only applies to lane-stable frames; turn frames always
    keep their route.
    """
    rng = np.random.default_rng(rng_seed)
    dx, dy = rng.normal(0.0, 1.0, size=2) * sigma_xy
    dpsi = rng.normal(0.0, 1.0) * sigma_yaw
    u_black, u_drop = rng.uniform(size=2)
    x, y, psi = (float(v) for v in pose)
    flags = {
        "blackout": bool(u_black < p_blackout),
        "drop_route": bool(lane_stable and u_drop < p_drop_route),
    }
    return (x + dx, y + dy, psi + dpsi), flags
