"""Deployment-time fusion: odometry distance filter, distance-indexed prediction buffer, fusion policies."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import math

import numpy as np

from .evidential import constrain, epistemic_variance

MODES = ("none", "uniform", "evidential")


class EmptyBinError(LookupError):
    """No usable prediction is stored for the current distance."""


# ---------------------------------------------------------------------------- distance filter
@dataclass(frozen=True)
class DistanceEstimator:
    """Two-state (speed, distance) linear Kalman filter driven by speed measurements.

    Speed follows a random walk with intensity ``q_speed``; measurements have
    standard deviation ``r_speed``.  Distance integrates the corrected speed.
    """

    distance: float = 0.0
    speed: float = 0.0
    var_distance: float = 1e-12
    var_speed: float = 1.0
    q_speed: float = 0.5
    r_speed: float = 0.1

    def __post_init__(self):
        if self.var_distance <= 0 or self.var_speed <= 0:
            raise ValueError("filter variances must be positive")


def kf_update(est: DistanceEstimator, measured_speed: float, dt: float) -> DistanceEstimator:
    """Predict, correct with the measured speed, then advance the travelled distance."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    z = max(float(measured_speed), 0.0)
    p_pred = est.var_speed + est.q_speed ** 2 * dt
    denom = p_pred + est.r_speed ** 2
    gain = p_pred / denom if denom > 0 else 1.0
    v = est.speed + gain * (z - est.speed)
    p_v = max((1.0 - gain) * p_pred, 1e-12)
    d = est.distance + max(v, 0.0) * dt
    p_d = est.var_distance + dt * dt * p_v
    return replace(est, distance=d, speed=v, var_distance=p_d, var_speed=p_v)


# ---------------------------------------------------------------------------- buffer
@dataclass
class Entry:
    x: float
    lam: float
    k: int


@dataclass
class PredictionBuffer:
    """1 m distance bins; bin b holds at most one entry per lookahead k.

    A newer frame's prediction for the same (bin, k) replaces the older one,
    so a bin never holds more than K entries even when several frames fall
    inside the same metre.
    """

    K: int = 10
    bin_width: float = 1.0
    purge_behind: float = 2.0
    bins: dict = field(default_factory=dict)
    d: float = 0.0

    def bin_index(self, d: float) -> int:
        return int(math.floor(d / self.bin_width + 0.5))

    def clear(self) -> None:
        self.bins.clear()

    def entries(self, d: float) -> list[Entry]:
        slot = self.bins.get(self.bin_index(d), {})
        return [slot[k] for k in sorted(slot)]

    def purge(self, d: float) -> None:
        oldest = self.bin_index(d - self.purge_behind)
        for b in [b for b in self.bins if b < oldest]:
            del self.bins[b]


def record(buffer: PredictionBuffer, d: float, x, variances=None) -> list[int]:
    """Store prediction x_k with confidence 1/Var_k in bin(d + k).

    ``variances=None`` stores unit confidences (deterministic model).
    Returns the lookaheads skipped because their variance was unusable.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size > buffer.K:
        raise ValueError(f"{x.size} lookaheads exceed buffer depth {buffer.K}")
    if variances is None:
        lam = np.ones_like(x)
        bad = np.zeros(x.size, dtype=bool)
    else:
        var = np.asarray(variances, dtype=np.float64).ravel()
        if var.shape != x.shape:
            raise ValueError("one variance per lookahead required")
        bad = ~np.isfinite(var) | (var <= 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = 1.0 / var
        bad |= ~np.isfinite(lam) | (lam <= 0)
    base = buffer.bin_index(d)
    skipped = []
    for k in range(x.size):
        if bad[k]:
            skipped.append(k)
            continue
        buffer.bins.setdefault(base + k, {})[k] = Entry(float(x[k]), float(lam[k]), k)
    buffer.d = d
    buffer.purge(d)
    return skipped


def variances_from_raw(e_raw) -> np.ndarray:
    """Epistemic variance per lookahead from raw (K, 4) evidential outputs."""
    return epistemic_variance(constrain(e_raw))


@dataclass
class FusionResult:
    control: float
    mode: str
    entries: list[Entry]
    weights: np.ndarray


def fuse(buffer: PredictionBuffer, d: float, mode: str, literal_division: bool = False) -> FusionResult:
    """Combine the predictions stored for the current distance.

    none -> the lookahead-0 entry; uniform -> mean; evidential -> sum x_j
    lam_j / sum lam.  ``literal_division`` additionally divides the
    evidential result by the number of entries.
    """
    if mode not in MODES:
        raise ValueError(f"unknown fusion mode {mode!r}")
    entries = buffer.entries(d)
    if not entries:
        raise EmptyBinError(f"no predictions stored for d={d:.2f}")
    xs = np.array([e.x for e in entries])
    if mode == "none":
        current = [e for e in entries if e.k == 0]
        if not current:
            raise EmptyBinError(f"no current-frame prediction for d={d:.2f}")
        w = np.array([1.0 if e.k == 0 else 0.0 for e in entries])
        return FusionResult(current[0].x, mode, entries, w)
    if mode == "uniform":
        w = np.full(xs.size, 1.0 / xs.size)
        return FusionResult(float(xs.mean()), mode, entries, w)
    lam = np.array([e.lam for e in entries])
    w = lam / lam.sum()
    if np.all(lam == lam[0]):
        out = float(xs.mean())   # equal confidences reduce to the mean, bit for bit
    else:
        out = float(np.dot(xs, lam) / lam.sum())
    if literal_division:
        out /= xs.size
    return FusionResult(out, mode, entries, w)
