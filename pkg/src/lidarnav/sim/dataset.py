"""Oracle data collection: drive, scan, label with future curvatures, tag, write frame files."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
import json
import math
import os
from pathlib import Path
import shutil
import tempfile

import numpy as np

from ..formats import read_frame, write_frame
from ..geometry import FrameRejected, PointCloud, curvature_labels
from .scanner import ScannerConfig, render_scan
from .track import make_track
from .vehicle import oracle_driver, state_on_route, step, tracking_error

DATASET_VERSION = 1


@dataclass
class DataGenConfig:
    K: int = 10
    speed: float = 5.0
    dt: float = 0.1
    frame_spacing: float = 1.0
    perturb_every: tuple = (20.0, 40.0)   # metres between teleport perturbations
    perturb_lateral: float = 1.2
    perturb_heading: float = math.radians(3.0)
    scanner: ScannerConfig = field(default_factory=ScannerConfig)


@dataclass
class FrameMeta:
    index: int
    track: str
    arc: float
    x: float
    y: float
    psi: float
    tag: str


def drive_and_record(track, n_frames: int, seed, config: DataGenConfig):
    """One oracle drive collecting up to ``n_frames`` labelled frames."""
    rng = np.random.default_rng(seed)
    state = state_on_route(track, 0.0, config.speed)
    next_perturb = rng.uniform(*config.perturb_every)
    next_frame = 0.0
    traj, teleports, pending = [], [], []
    # drive a little beyond the last frame so every label window is covered
    tick = 0
    while True:
        if state.d >= next_perturb:
            arc, _, _ = tracking_error(track, state)
            state = state_on_route(track, arc, config.speed, state.d,
                                   rng.uniform(-1, 1) * config.perturb_lateral,
                                   rng.uniform(-1, 1) * config.perturb_heading)
            teleports.append(state.d)
            next_perturb = state.d + rng.uniform(*config.perturb_every)
        kappa = oracle_driver(track, state)
        if state.d >= next_frame and len(pending) < n_frames:
            arc, _, _ = tracking_error(track, state)
            cloud = render_scan(track, state, [int(rng.integers(2 ** 31)), tick], config.scanner)
            pending.append((state, arc, cloud))
            next_frame += config.frame_spacing
        traj.append((state.d, state.v * kappa, state.v))
        state = step(state, kappa, config.dt)
        tick += 1
        if len(pending) >= n_frames and state.d > pending[-1][0].d + config.K + 1:
            break
    traj = np.array(traj)
    teleports = np.array(teleports)
    frames = []
    for st, arc, cloud in pending:
        window_end = st.d + config.K - 1
        if teleports.size and np.any((teleports > st.d) & (teleports <= window_end + config.dt * st.v)):
            continue
        try:
            y = curvature_labels(traj, config.K, st.d)
        except FrameRejected:
            continue
        frames.append((st, arc, cloud, y))
    return frames


def gen_dataset(tracks, n_frames: int, seed: int, out_dir, config: DataGenConfig | None = None) -> dict:
    """Write ``n_frames`` frames spread round-robin over ``tracks`` into ``out_dir``.

    The directory is assembled in a temporary sibling and renamed into place,
    so a failure leaves nothing behind.  Returns the manifest.
    """
    if n_frames <= 0:
        raise ValueError("n_frames must be positive")
    config = config or DataGenConfig()
    out_dir = Path(out_dir)
    if out_dir.exists():
        raise FileExistsError(f"{out_dir} already exists")
    if not out_dir.parent.is_dir():
        raise FileNotFoundError(f"parent directory {out_dir.parent} does not exist")
    tracks = list(tracks)
    tmp = Path(tempfile.mkdtemp(prefix=out_dir.name + ".", suffix=".tmp", dir=out_dir.parent))
    try:
        (tmp / "frames").mkdir()
        metas: list[FrameMeta] = []
        lap = 0
        while len(metas) < n_frames:
            name = tracks[lap % len(tracks)]
            track = make_track(name)
            # each drive is capped at one lap so tracks stay interleaved
            per_lap = int(track.length / config.frame_spacing) - config.K - 2
            want = min(n_frames - len(metas), max(per_lap, 1))
            for st, arc, cloud, y in drive_and_record(track, want, [seed, lap], config):
                if len(metas) >= n_frames:
                    break
                i = len(metas)
                write_frame(tmp / "frames" / f"{i:06d}.sevf", cloud.points, y)
                metas.append(FrameMeta(i, name, round(float(arc), 6), round(st.x, 6), round(st.y, 6),
                                       round(st.psi, 6), track.tag(arc)))
            lap += 1
        counts = {}
        for m in metas:
            counts[m.tag] = counts.get(m.tag, 0) + 1
        manifest = {
            "version": DATASET_VERSION, "n_frames": len(metas), "K": config.K, "seed": seed,
            "tracks": tracks, "tag_counts": counts,
            "config": json.loads(json.dumps(asdict(config))),
        }
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        with open(tmp / "index.tsv", "w") as f:
            f.write("index\ttrack\tarc\tx\ty\tpsi\ttag\n")
            for m in metas:
                f.write(f"{m.index}\t{m.track}\t{m.arc}\t{m.x}\t{m.y}\t{m.psi}\t{m.tag}\n")
        os.replace(tmp, out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return manifest


@dataclass
class Frame:
    cloud: PointCloud
    labels: np.ndarray
    meta: FrameMeta


class DatasetError(ValueError):
    """Dataset directory is missing pieces or does not match the expected schema."""


def load_dataset(path) -> tuple[dict, list[Frame]]:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
        rows = (path / "index.tsv").read_text().splitlines()
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read dataset at {path}: {exc}") from exc
    if manifest.get("version") != DATASET_VERSION:
        raise DatasetError(f"unsupported dataset version {manifest.get('version')}")
    header = rows[0].split("\t")
    if header != ["index", "track", "arc", "x", "y", "psi", "tag"]:
        raise DatasetError("unexpected index header")
    frames = []
    for row in rows[1:]:
        i, track, arc, x, y, psi, tag = row.split("\t")
        meta = FrameMeta(int(i), track, float(arc), float(x), float(y), float(psi), tag)
        pts, labels = read_frame(path / "frames" / f"{meta.index:06d}.sevf")
        if labels.size != manifest["K"]:
            raise DatasetError(f"frame {i} has {labels.size} labels, manifest says K={manifest['K']}")
        frames.append(Frame(PointCloud(pts.astype(np.float64)), labels.astype(np.float64), meta))
    if len(frames) != manifest["n_frames"]:
        raise DatasetError("index and manifest disagree on the frame count")
    return manifest, frames
