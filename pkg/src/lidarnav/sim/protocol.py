"""Evaluation protocols built from episodes: mode x seed sweeps, recovery trials, perturbed starts."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
import math
import statistics

import numpy as np

from .episode import EpisodeConfig, EpisodeTrace, RecoveryResult, recovery_trial, run_episode
from .scanner import FailureSchedule
from .track import make_track


@dataclass(frozen=True)
class EpisodeJob:
    track: str
    mode: str
    seed: int
    failures: bool
    config: EpisodeConfig


def _run_job(policy, job: EpisodeJob, schedule: FailureSchedule | None) -> EpisodeTrace:
    return run_episode(policy, make_track(job.track), schedule if job.failures else None,
                       job.config, job.seed, job.mode)


def sweep(policy, tracks, modes, seeds, schedule: FailureSchedule | None,
          config: EpisodeConfig | None = None, workers: int = 1) -> list[EpisodeTrace]:
    """One episode per (track, mode, seed); ordered track-major, then mode, then seed."""
    cfg = config or EpisodeConfig()
    jobs = [EpisodeJob(t, m, s, schedule is not None, cfg) for t in tracks for m in modes for s in seeds]
    if workers <= 1:
        return [_run_job(policy, j, schedule) for j in jobs]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(_run_job, [policy] * len(jobs), jobs, [schedule] * len(jobs)))


def median_interventions(traces, mode: str, track: str | None = None) -> float:
    vals = [t.interventions for t in traces if t.mode == mode and (track is None or t.track == track)]
    if not vals:
        raise ValueError(f"no traces for mode {mode!r}")
    return float(statistics.median(vals))


def recovery_sweep(policy, track_name: str, degrees: float = 20.0, trials: int = 20,
                   mode: str = "evidential", config: EpisodeConfig | None = None,
                   seed: int = 0) -> list[RecoveryResult]:
    """Alternate +/- ``degrees`` heading offsets over ``trials`` seeds."""
    track = make_track(track_name)
    out = []
    for i in range(trials):
        sign = 1.0 if i % 2 == 0 else -1.0
        out.append(recovery_trial(policy, track, sign * math.radians(degrees), seed + i, mode, config))
    return out


def success_rate(results) -> float:
    return sum(r.success for r in results) / len(results) if results else 0.0


def perturbed_start(config: EpisodeConfig, track_length: float, seed: int,
                    lateral: float = 1.0, heading_deg: float = 20.0) -> EpisodeConfig:
    """A start pose drawn from the seed: random arc, lateral offset and heading offset."""
    rng = np.random.default_rng([seed, 11])
    sign = 1.0 if rng.uniform() < 0.5 else -1.0
    return replace(config,
                   start_arc=float(rng.uniform(0.0, track_length)),
                   start_lateral=float(rng.uniform(-lateral, lateral)),
                   start_heading=sign * math.radians(float(rng.uniform(0.5, 1.0)) * heading_deg))
