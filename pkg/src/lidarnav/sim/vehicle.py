"""Kinematic vehicle, tracking errors, and the pure-pursuit oracle driver."""

from __future__ import annotations

from dataclasses import dataclass, replace
import math

import numpy as np

from ..geometry import KAPPA_MAX
from .track import OffTrackError, Track

PURSUIT_LOOKAHEAD = 8.0


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    psi: float
    v: float
    d: float = 0.0
    clamped: bool = False

    def __post_init__(self):
        if not all(math.isfinite(val) for val in (self.x, self.y, self.psi, self.v, self.d)):
            raise ValueError("non-finite vehicle state")
        if self.v < 0:
            raise ValueError("speed must be non-negative")


def step(s: VehicleState, kappa_cmd: float, dt: float, kappa_max: float = KAPPA_MAX) -> VehicleState:
    """Advance one tick at constant speed; midpoint heading integration."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    k = float(np.clip(kappa_cmd, -kappa_max, kappa_max))
    clamped = k != kappa_cmd
    dpsi = s.v * k * dt
    mid = s.psi + 0.5 * dpsi
    ds = s.v * dt
    return VehicleState(s.x + ds * math.cos(mid), s.y + ds * math.sin(mid), s.psi + dpsi,
                        s.v, s.d + ds, clamped)


def wrap_angle(a):
    return (np.asarray(a) + math.pi) % (2 * math.pi) - math.pi


def tracking_error(track: Track, s: VehicleState):
    """(route arc length, signed cross-track error, heading error) of the vehicle."""
    arc, lat, _ = track.route.project([[s.x, s.y]])
    _, _, psi_ref = track.route.pose_at(arc[0])
    return float(arc[0]), float(lat[0]), float(wrap_angle(s.psi - psi_ref))


def state_on_route(track: Track, arc: float, v: float, d: float = 0.0,
                   lateral: float = 0.0, heading: float = 0.0) -> VehicleState:
    """Vehicle placed at route arc length ``arc`` with optional lateral / heading offsets."""
    x, y, psi = (float(val) for val in track.route.pose_at(arc))
    return VehicleState(x - lateral * math.sin(psi), y + lateral * math.cos(psi), psi + heading, v, d)


def oracle_driver(track: Track, s: VehicleState, lookahead: float = PURSUIT_LOOKAHEAD,
                  kappa_max: float = KAPPA_MAX) -> float:
    """Pure pursuit toward the route point ``lookahead`` metres of arc ahead."""
    arc, _, dist = track.route.project([[s.x, s.y]])
    if dist[0] > 2 * track.half_width:
        raise OffTrackError(f"vehicle {dist[0]:.2f} m from the route")
    tx, ty, _ = track.route.pose_at(arc[0] + lookahead)
    dx, dy = float(tx) - s.x, float(ty) - s.y
    c, sn = math.cos(s.psi), math.sin(s.psi)
    fwd = c * dx + sn * dy
    left = -sn * dx + c * dy
    kappa = 2.0 * left / max(fwd * fwd + left * left, 1e-9)
    return float(np.clip(kappa, -kappa_max, kappa_max))
