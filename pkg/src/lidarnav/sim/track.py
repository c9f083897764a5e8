"""Procedural tracks: arc-length polylines built from constant / linear-curvature segments."""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.spatial import cKDTree

FORK_TAG_RADIUS = 15.0


class OffTrackError(ValueError):
    """The vehicle is too far from the route to define a control target."""


@dataclass
class Polyline:
    """Densely sampled centerline with heading and curvature per sample.

    For closed polylines the last sample coincides with the first and is
    dropped, so index arithmetic wraps modulo the sample count.
    """

    s: np.ndarray
    xy: np.ndarray
    psi: np.ndarray
    kappa: np.ndarray
    closed: bool = False
    length: float = 0.0
    _tree: cKDTree | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if np.any(np.diff(self.s) <= 0):
            raise ValueError("arc length must be strictly increasing")
        if not self.length:
            self.length = float(self.s[-1])
        self._tree = cKDTree(self.xy)

    @classmethod
    def from_segments(cls, segments, start=(0.0, 0.0, 0.0), ds: float = 0.05,
                      closed: bool = False) -> "Polyline":
        """Integrate (length, kappa_start, kappa_end) segments with linear curvature."""
        kappas, steps = [], []
        for length, k0, k1 in segments:
            n = max(1, int(round(length / ds)))
            t = (np.arange(n) + 0.5) / n
            kappas.append(k0 + (k1 - k0) * t)
            steps.append(np.full(n, length / n))
        kmid = np.concatenate(kappas)
        steps = np.concatenate(steps)
        x0, y0, p0 = start
        dpsi = steps * kmid
        psi = p0 + np.concatenate([[0.0], np.cumsum(dpsi)])
        mid = psi[:-1] + 0.5 * dpsi
        x = x0 + np.concatenate([[0.0], np.cumsum(steps * np.cos(mid))])
        y = y0 + np.concatenate([[0.0], np.cumsum(steps * np.sin(mid))])
        s = np.concatenate([[0.0], np.cumsum(steps)])
        # curvature at samples: average of the neighbouring step curvatures
        kap = np.empty_like(s)
        kap[1:-1] = 0.5 * (kmid[:-1] + kmid[1:])
        kap[0], kap[-1] = kmid[0], kmid[-1]
        xy = np.stack([x, y], axis=1)
        if closed:
            gap = np.hypot(*(xy[-1] - xy[0]))
            if gap > 1e-3:
                raise ValueError(f"closed track does not close (gap {gap:.4f} m)")
            return cls(s[:-1], xy[:-1], psi[:-1], kap[:-1], True, float(s[-1]))
        return cls(s, xy, psi, kap, False)

    def mirrored(self) -> "Polyline":
        """Reflection about the x axis: left turns become right turns."""
        xy = self.xy * np.array([1.0, -1.0])
        return Polyline(self.s.copy(), xy, -self.psi, -self.kappa, self.closed, self.length)

    def wrap(self, s):
        s = np.asarray(s, dtype=np.float64)
        if self.closed:
            return np.mod(s, self.length)
        return np.clip(s, 0.0, self.length)

    def pose_at(self, s):
        """Interpolated (x, y, psi) at arc length ``s`` (scalar or array)."""
        s = self.wrap(s)
        if self.closed:
            ss = np.append(self.s, self.length)
            xs = np.append(self.xy[:, 0], self.xy[0, 0])
            ys = np.append(self.xy[:, 1], self.xy[0, 1])
            ps = np.append(self.psi, self.psi[0] + 2 * math.pi * round((self.psi[-1] - self.psi[0]) / (2 * math.pi)))
        else:
            ss, xs, ys, ps = self.s, self.xy[:, 0], self.xy[:, 1], self.psi
        return np.interp(s, ss, xs), np.interp(s, ss, ys), np.interp(s, ss, ps)

    def kappa_at(self, s):
        s = self.wrap(s)
        if self.closed:
            return np.interp(s, np.append(self.s, self.length), np.append(self.kappa, self.kappa[0]))
        return np.interp(s, self.s, self.kappa)

    def project(self, points):
        """Nearest centerline point: returns (s, signed lateral offset, distance).

        Lateral offset is positive to the left of the direction of travel.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        _, idx = self._tree.query(pts)
        n = self.s.size
        best_s = np.empty(len(pts))
        best_lat = np.empty(len(pts))
        best_d = np.full(len(pts), np.inf)
        for shift in (-1, 0):
            i0 = idx + shift
            i1 = i0 + 1
            if self.closed:
                i0, i1 = i0 % n, i1 % n
                seg_len = np.where(i1 == 0, self.length - self.s[i0], self.s[i1] - self.s[i0])
            else:
                valid = (i0 >= 0) & (i1 < n)
                i0, i1 = np.clip(i0, 0, n - 1), np.clip(i1, 0, n - 1)
                seg_len = np.where(valid, self.s[i1] - self.s[i0], 0.0)
            a, b = self.xy[i0], self.xy[i1]
            ab = b - a
            denom = np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-18)
            t = np.clip(np.einsum("ij,ij->i", pts - a, ab) / denom, 0.0, 1.0)
            t = np.where(seg_len > 0, t, 0.0)
            proj = a + t[:, None] * ab
            diff = pts - proj
            dist = np.hypot(diff[:, 0], diff[:, 1])
            heading = np.where(seg_len[:, None] > 0, ab, np.stack([np.cos(self.psi[i0]), np.sin(self.psi[i0])], 1))
            cross = heading[:, 0] * diff[:, 1] - heading[:, 1] * diff[:, 0]
            lat = np.sign(cross) * dist
            better = dist < best_d
            best_d = np.where(better, dist, best_d)
            best_lat = np.where(better, lat, best_lat)
            best_s = np.where(better, self.s[i0] + t * seg_len, best_s)
        return best_s, best_lat, best_d

    def offset_points(self, offset: float, spacing: float = 0.25) -> np.ndarray:
        """Points at a fixed lateral offset (left positive), every ``spacing`` metres."""
        end = self.length if not self.closed else self.length - 1e-9
        s = np.arange(0.0, end + 1e-9, spacing)
        x, y, psi = self.pose_at(s)
        return np.stack([x - offset * np.sin(psi), y + offset * np.cos(psi)], axis=1)


def turn(angle: float, radius: float, transition: float = 6.0):
    """Clothoid-in, arc, clothoid-out segments turning by ``angle`` (left positive)."""
    k = math.copysign(1.0 / radius, angle)
    transition = min(transition, abs(angle) * radius * 0.999)
    arc = (abs(angle) - transition / radius) * radius
    return [(transition, 0.0, k), (arc, k, k), (transition, k, 0.0)]


def straight(length: float):
    return [(length, 0.0, 0.0)]


@dataclass
class Track:
    """A route loop plus optional fork stubs, bounded by walls at +/- half_width."""

    name: str
    route: Polyline
    branches: list = field(default_factory=list)
    forks: list = field(default_factory=list)       # arc lengths on the route
    half_width: float = 4.0
    wall_spacing: float = 0.25
    recovery_s: float = 0.0

    def __post_init__(self):
        self._walls = None
        self._wall_tree = None

    @property
    def roads(self) -> list:
        return [self.route] + list(self.branches)

    @property
    def length(self) -> float:
        return self.route.length

    @property
    def closed(self) -> bool:
        return self.route.closed

    def road_distance(self, points) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.min([r.project(pts)[2] for r in self.roads], axis=0)

    def route_distance(self, points) -> np.ndarray:
        return self.route.project(np.atleast_2d(points))[2]

    def tag(self, s: float) -> str:
        """"turn" within FORK_TAG_RADIUS of a fork (along the route), else "lane-stable"."""
        for f in self.forks:
            gap = abs(s - f)
            if self.closed:
                gap = min(gap, self.length - gap)
            if gap <= FORK_TAG_RADIUS:
                return "turn"
        return "lane-stable"

    def walls(self):
        """Wall segments (m, 2, 2) and a KD-tree over their midpoints."""
        if self._walls is None:
            segs = []
            roads = self.roads
            for ri, road in enumerate(roads):
                for side in (-1.0, 1.0):
                    pts = road.offset_points(side * self.half_width, self.wall_spacing)
                    keep = np.ones(len(pts), dtype=bool)
                    for rj, other in enumerate(roads):
                        if rj != ri:
                            keep &= other.project(pts)[2] > self.half_width - 1e-6
                    nxt = np.roll(np.arange(len(pts)), -1) if road.closed else np.arange(1, len(pts))
                    cur = np.arange(len(nxt))
                    ok = keep[cur] & keep[nxt]
                    segs.append(np.stack([pts[cur[ok]], pts[nxt[ok]]], axis=1))
            self._walls = np.concatenate(segs, axis=0)
            self._wall_tree = cKDTree(self._walls.mean(axis=1))
        return self._walls, self._wall_tree

    def clearance(self) -> float:
        """Smallest distance between route samples that are far apart along the route."""
        r = self.route
        pairs = r._tree.query_pairs(2 * self.half_width + 0.5, output_type="ndarray")
        if len(pairs) == 0:
            return math.inf
        gap = np.abs(r.s[pairs[:, 0]] - r.s[pairs[:, 1]])
        if r.closed:
            gap = np.minimum(gap, r.length - gap)
        bad = pairs[gap > 4 * self.half_width + 2]
        if len(bad) == 0:
            return math.inf
        return float(np.min(np.hypot(*(r.xy[bad[:, 0]] - r.xy[bad[:, 1]]).T)))

    def mirrored(self) -> "Track":
        return Track(self.name + "_cw", self.route.mirrored(), [b.mirrored() for b in self.branches],
                     list(self.forks), self.half_width, self.wall_spacing, self.recovery_s)


# ---------------------------------------------------------------------------- registry
def _loop(half):
    """A closed loop from a half sequence that turns by pi, repeated twice."""
    segs = list(half) + list(half)
    return Polyline.from_segments(segs, closed=True)


def _halves():
    pi = math.pi
    return {
        # training family: moderate to tight curves, left and right turns
        "train_a": straight(30) + turn(pi / 2, 15) + straight(20) + turn(pi / 2, 10),
        "train_b": straight(25) + turn(pi / 2, 9) + straight(10) + turn(-pi / 4, 13)
                   + straight(10) + turn(3 * pi / 4, 10),
        "train_c": straight(35) + turn(pi / 3, 20) + straight(10) + turn(2 * pi / 3, 9),
        "train_d": straight(20) + turn(3 * pi / 4, 11) + straight(20) + turn(-pi / 4, 25)
                   + straight(10) + turn(pi / 2, 14),
        # test family: tight curves, a long straight for recovery trials
        "test": straight(55) + turn(pi / 2, 8) + straight(12) + turn(-pi / 2, 10)
                + straight(12) + turn(pi, 9),
        "circle50": [(100 * pi, 1 / 50, 1 / 50)],
        "oval": straight(60) + turn(pi, 20),
    }


TRAIN_TRACKS = ("train_a", "train_b", "train_c", "train_d")
TEST_TRACKS = ("test",)


def make_track(name: str, half_width: float = 4.0) -> Track:
    """Build a named stock track.  A ``_cw`` suffix mirrors it (clockwise driving)."""
    if name.endswith("_cw"):
        return make_track(name[:-3], half_width).mirrored()
    halves = _halves()
    if name == "straight":
        route = Polyline.from_segments(straight(600))
        return Track(name, route, half_width=half_width, recovery_s=20.0)
    if name == "fork":
        half = straight(40) + turn(math.pi / 2, 12) + straight(30) + turn(math.pi / 2, 12)
        route = _loop(half)
        fork_s = 40.0
        x, y, psi = route.pose_at(fork_s)
        stub = Polyline.from_segments(straight(45), start=(float(x), float(y), float(psi)))
        return Track(name, route, [stub], [fork_s], half_width, recovery_s=0.0)
    if name not in halves:
        raise KeyError(f"unknown track {name!r}")
    if name == "circle50":
        route = Polyline.from_segments(halves[name], closed=True)
    else:
        route = _loop(halves[name])
    return Track(name, route, half_width=half_width, recovery_s=0.0)
