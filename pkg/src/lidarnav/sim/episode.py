"""Closed-loop episodes with fusion, interventions and recovery trials."""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from ..fusion import (DistanceEstimator, EmptyBinError, MODES, PredictionBuffer, fuse, kf_update,
                      record, variances_from_raw)
from ..geometry import KAPPA_MAX, NEAR_RADIUS, VOXEL_SIZE, filter_near, quantize, render_map
from .scanner import FailureSchedule, Scanner, ScannerConfig
from .track import Track
from .vehicle import VehicleState, oracle_driver, state_on_route, step, tracking_error


# ---------------------------------------------------------------------------- policies
class OraclePolicy:
    """Pure pursuit on ground truth; bypasses fusion."""

    direct = True
    needs_scan = False
    K = 1

    def predict(self, cloud, state, track):
        return np.array([oracle_driver(track, state)]), None


class ConstantPolicy:
    direct = True
    needs_scan = False
    K = 1

    def __init__(self, kappa: float = 0.0):
        self.kappa = kappa

    def predict(self, cloud, state, track):
        return np.array([self.kappa]), None


class NetworkPolicy:
    """Voxelize the scan, run the network, and hand (x, variance) to the fusion buffer.

    Empty scans are passed through (zero LiDAR feature) so the evidential
    head can report them as low-confidence.  ``fuse_gamma`` stores the
    evidential mean instead of the deterministic output.
    """

    direct = False
    needs_scan = True

    def __init__(self, net, fuse_gamma: bool = False, navigation: bool = False,
                 voxel_size: float = VOXEL_SIZE, near_radius: float = NEAR_RADIUS):
        self.net = net
        self.K = net.cfg.K
        self.fuse_gamma = fuse_gamma
        self.navigation = navigation and net.cfg.use_map
        self.voxel_size = voxel_size
        self.near_radius = near_radius
        self.position_features = net.cfg.in_channels == 5

    def predict(self, cloud, state, track):
        vox = quantize(filter_near(cloud, self.near_radius), self.voxel_size,
                       position_features=self.position_features)
        raster = None
        if self.navigation:
            raster = render_map(track, True, (state.x, state.y, state.psi))
        out = self.net.predict(vox, raster, allow_empty=True)
        if out.e is None:
            return out.x, None
        x = out.e[:, 0] if self.fuse_gamma else out.x
        return x, variances_from_raw(out.e)


# ---------------------------------------------------------------------------- traces
@dataclass
class TickRecord:
    tick: int
    time: float
    x: float
    y: float
    heading: float
    speed: float
    distance_est: float
    cross_track: float
    raw_x0: float
    command: float
    failure: bool
    intervention: bool
    entries: list = field(default_factory=list)   # (x, normalized weight)


@dataclass
class EpisodeTrace:
    track: str
    mode: str
    seed: int
    records: list = field(default_factory=list)
    distance: float = 0.0

    @property
    def interventions(self) -> int:
        return sum(r.intervention for r in self.records)

    def summary(self) -> dict:
        return {
            "track": self.track,
            "mode": self.mode,
            "seed": self.seed,
            "ticks": len(self.records),
            "interventions": self.interventions,
            "distance": round(self.distance, 6),
            "failure_ticks": sum(r.failure for r in self.records),
            "max_abs_cross_track": round(max((abs(r.cross_track) for r in self.records), default=0.0), 6),
        }


@dataclass
class EpisodeConfig:
    dt: float = 0.1
    speed: float = 5.0
    distance: float | None = None        # None: one lap of the route
    cte_max: float = 1.5
    heading_max: float = math.radians(60.0)
    max_hold: int = 3
    speed_noise: float = 0.1
    kappa_max: float = KAPPA_MAX
    literal_division: bool = False
    start_arc: float = 0.0
    start_lateral: float = 0.0
    start_heading: float = 0.0
    scanner: ScannerConfig = field(default_factory=ScannerConfig)


def run_episode(policy, track: Track, schedule: FailureSchedule | None,
                config: EpisodeConfig | None = None, seed: int = 0, mode: str = "evidential",
                stop=None) -> EpisodeTrace:
    """Drive ``policy`` around ``track`` at fixed speed; 10 Hz scan -> predict -> fuse -> step.

    ``stop(record, tracking)`` may end the episode early by returning True.
    """
    cfg = config or EpisodeConfig()
    if mode not in MODES:
        raise ValueError(f"unknown fusion mode {mode!r}")
    state = state_on_route(track, cfg.start_arc, cfg.speed, 0.0, cfg.start_lateral, cfg.start_heading)
    est = DistanceEstimator(speed=cfg.speed)
    buffer = PredictionBuffer(K=max(policy.K, 1))
    scanner = Scanner(cfg.scanner)
    noise = np.random.default_rng([seed, 7])
    target = cfg.distance if cfg.distance is not None else track.length
    trace = EpisodeTrace(track.name, mode, seed)
    last_cmd, hold, tick = 0.0, 0, 0
    while state.d < target - 1e-9:
        failure = bool(schedule is not None and schedule.active(state.d))
        cloud = scanner.scan(track, state, schedule, [seed, tick]) if policy.needs_scan else None
        x, var = policy.predict(cloud, state, track)
        entries = []
        if policy.direct:
            cmd = float(x[0])
        else:
            record(buffer, est.distance, x, var)
            try:
                res = fuse(buffer, est.distance, mode, cfg.literal_division)
                cmd, hold = res.control, 0
                entries = [(e.x, float(w)) for e, w in zip(res.entries, res.weights)]
            except EmptyBinError:
                cmd, hold = last_cmd, hold + 1
        last_cmd = cmd
        state = step(state, cmd, cfg.dt, cfg.kappa_max)
        est = kf_update(est, state.v + noise.normal(0.0, cfg.speed_noise), cfg.dt)
        arc, cte, he = tracking_error(track, state)
        intervention = abs(cte) > cfg.cte_max or abs(he) > cfg.heading_max or hold > cfg.max_hold
        rec = TickRecord(tick, round((tick + 1) * cfg.dt, 10), state.x, state.y, state.psi, state.v,
                         est.distance, cte, float(x[0]), cmd, failure, intervention, entries)
        trace.records.append(rec)
        if intervention:
            state = state_on_route(track, arc, cfg.speed, state.d)
            buffer.clear()
            hold = 0
        tick += 1
        if stop is not None and stop(rec, (arc, cte, he)):
            break
    trace.distance = state.d
    return trace


@dataclass
class RecoveryResult:
    success: bool
    time_to_stable: float | None
    trace: EpisodeTrace


def recovery_trial(policy, track: Track, perturbation: float, seed: int = 0,
                   mode: str = "evidential", config: EpisodeConfig | None = None,
                   horizon: float = 10.0, cte_tol: float = 0.3,
                   heading_tol: float = math.radians(5.0)) -> RecoveryResult:
    """Start centred with a heading offset; success if stable within ``horizon`` seconds.

    Stable means |cross-track| < cte_tol and |heading error| < heading_tol on
    some tick before any intervention.
    """
    if abs(perturbation) > math.radians(45.0) + 1e-12:
        raise ValueError("perturbation must be within +/-45 degrees")
    base = config or EpisodeConfig()
    cfg = EpisodeConfig(**{**base.__dict__, "start_arc": track.recovery_s,
                           "start_heading": perturbation, "start_lateral": 0.0,
                           "distance": base.speed * horizon})
    outcome = {"t": None, "failed": False}

    def stop(rec, tracking):
        _, cte, he = tracking
        if rec.intervention:
            outcome["failed"] = True
            return True
        if abs(cte) < cte_tol and abs(he) < heading_tol:
            outcome["t"] = rec.time
            return True
        return False

    trace = run_episode(policy, track, None, cfg, seed, mode, stop=stop)
    ok = outcome["t"] is not None and not outcome["failed"]
    return RecoveryResult(ok, outcome["t"], trace)
