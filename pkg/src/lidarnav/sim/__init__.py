"""Deterministic closed-loop driving harness."""

from .dataset import DataGenConfig, gen_dataset, load_dataset
from .episode import (ConstantPolicy, EpisodeConfig, EpisodeTrace, NetworkPolicy, OraclePolicy,
                      recovery_trial, run_episode)
from .scanner import FailureSchedule, Scanner, ScannerConfig, render_scan, scan
from .track import OffTrackError, Polyline, Track, make_track
from .vehicle import VehicleState, oracle_driver, state_on_route, step, tracking_error

__all__ = [
    "ConstantPolicy", "DataGenConfig", "EpisodeConfig", "EpisodeTrace", "FailureSchedule",
    "NetworkPolicy", "OffTrackError", "OraclePolicy", "Polyline", "Scanner", "ScannerConfig",
    "Track", "VehicleState", "gen_dataset", "load_dataset", "make_track", "oracle_driver",
    "recovery_trial", "render_scan", "run_episode", "scan", "state_on_route", "step",
    "tracking_error",
]
