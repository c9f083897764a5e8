"""Binary frame and checkpoint files (little-endian) and text episode traces."""

from __future__ import annotations

import io
import json
import os
from pathlib import Path
import struct

import numpy as np

FRAME_MAGIC = b"SEVF"
FRAME_VERSION = 1
CKPT_MAGIC = b"SEVW"
CKPT_VERSION = 1


class FormatError(ValueError):
    """A file does not match its declared format."""


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file: wanted {n} bytes, got {len(data)}")
    return data


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------- frames
def encode_frame(points: np.ndarray, labels) -> bytes:
    """points (n, 4) as f32 x, y, z, intensity, followed by the K-float label record."""
    pts = np.ascontiguousarray(points, dtype="<f4").reshape(-1, 4)
    y = np.ascontiguousarray(labels, dtype="<f4").ravel()
    return b"".join([FRAME_MAGIC, struct.pack("<II", FRAME_VERSION, pts.shape[0]), pts.tobytes(),
                     struct.pack("<I", y.size), y.tobytes()])


def decode_frame(data: bytes):
    f = io.BytesIO(data)
    if _read_exact(f, 4) != FRAME_MAGIC:
        raise FormatError("not a frame file (bad magic)")
    version, n = struct.unpack("<II", _read_exact(f, 8))
    if version != FRAME_VERSION:
        raise FormatError(f"unsupported frame version {version}")
    pts = np.frombuffer(_read_exact(f, 16 * n), dtype="<f4").reshape(n, 4)
    (k,) = struct.unpack("<I", _read_exact(f, 4))
    y = np.frombuffer(_read_exact(f, 4 * k), dtype="<f4")
    if f.read(1):
        raise FormatError("trailing bytes after label record")
    return pts.astype(np.float32), y.astype(np.float32)


def write_frame(path, points, labels) -> None:
    atomic_write(path, encode_frame(points, labels))


def read_frame(path):
    return decode_frame(Path(path).read_bytes())


# ---------------------------------------------------------------------------- checkpoints
def encode_checkpoint(arch_text: str, tensors: list[tuple[str, np.ndarray]]) -> bytes:
    """Magic, version, length-prefixed config text, then named f32 tensors in order."""
    out = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION)]
    cfg = arch_text.encode("utf-8")
    out += [struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(tensors))]
    for name, arr in tensors:
        a = np.array(arr, dtype="<f4", order="C")   # keeps 0-d shapes
        nb = name.encode("utf-8")
        out += [struct.pack("<I", len(nb)), nb, struct.pack("<I", a.ndim),
                struct.pack(f"<{a.ndim}I", *a.shape), a.tobytes()]
    return b"".join(out)


def decode_checkpoint(data: bytes):
    f = io.BytesIO(data)
    if _read_exact(f, 4) != CKPT_MAGIC:
        raise FormatError("not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", _read_exact(f, 4))
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (n_cfg,) = struct.unpack("<I", _read_exact(f, 4))
    arch_text = _read_exact(f, n_cfg).decode("utf-8")
    (count,) = struct.unpack("<I", _read_exact(f, 4))
    tensors = []
    for _ in range(count):
        (n_name,) = struct.unpack("<I", _read_exact(f, 4))
        name = _read_exact(f, n_name).decode("utf-8")
        (ndim,) = struct.unpack("<I", _read_exact(f, 4))
        shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(_read_exact(f, 4 * size), dtype="<f4").reshape(shape).astype(np.float32)
        tensors.append((name, arr))
    if f.read(1):
        raise FormatError("trailing bytes after last tensor")
    return arch_text, tensors


def save_network(net, path) -> None:
    """Parameters in declaration order, then batch-norm running statistics."""
    from .nn.network import param_specs, state_specs
    tensors = [(n, net.params[n]) for n, _ in param_specs(net.cfg)]
    tensors += [(n, net.state[n]) for n, _ in state_specs(net.cfg)]
    atomic_write(path, encode_checkpoint(net.cfg.to_text(), tensors))


def network_bytes(net) -> bytes:
    from .nn.network import param_specs, state_specs
    tensors = [(n, net.params[n]) for n, _ in param_specs(net.cfg)]
    tensors += [(n, net.state[n]) for n, _ in state_specs(net.cfg)]
    return encode_checkpoint(net.cfg.to_text(), tensors)


def load_network(path_or_bytes):
    from .nn.network import ArchConfig, FastLiDARNet, param_specs, state_specs
    data = path_or_bytes if isinstance(path_or_bytes, bytes) else Path(path_or_bytes).read_bytes()
    arch_text, tensors = decode_checkpoint(data)
    cfg = ArchConfig.from_text(arch_text)
    named = dict(tensors)
    params, state = {}, {}
    for name, shape in param_specs(cfg):
        if name not in named or named[name].shape != tuple(shape):
            raise FormatError(f"checkpoint tensor {name} missing or mis-shaped")
        params[name] = named[name].copy()
    for name, shape in state_specs(cfg):
        if name not in named or named[name].shape != tuple(shape):
            raise FormatError(f"checkpoint tensor {name} missing or mis-shaped")
        state[name] = named[name].copy()
    if len(named) != len(params) + len(state):
        raise FormatError("checkpoint holds unexpected tensors")
    return FastLiDARNet(cfg, params=params, state=state)


# ---------------------------------------------------------------------------- traces
TRACE_FIELDS = ("time", "x", "y", "heading", "speed", "distance_est", "cross_track",
                "raw_x0", "command", "failure", "intervention", "entries")


def format_trace(trace) -> str:
    """Tab-separated: tick + the 12 TRACE_FIELDS per line, then a '# summary' block."""
    lines = ["# tick\t" + "\t".join(TRACE_FIELDS)]
    for r in trace.records:
        entries = ",".join(f"{x:.6g}@{w:.6g}" for x, w in r.entries)
        lines.append("\t".join([
            str(r.tick), f"{r.time:.2f}", f"{r.x:.6f}", f"{r.y:.6f}", f"{r.heading:.6f}",
            f"{r.speed:.4f}", f"{r.distance_est:.6f}", f"{r.cross_track:.6f}", f"{r.raw_x0:.6g}",
            f"{r.command:.6g}", str(int(r.failure)), str(int(r.intervention)), entries or "-"]))
    lines.append("# summary")
    for k, v in trace.summary().items():
        lines.append(f"{k}\t{json.dumps(v)}")
    return "\n".join(lines) + "\n"


def parse_trace_summary(text: str) -> dict:
    out, in_summary = {}, False
    for line in text.splitlines():
        if line == "# summary":
            in_summary = True
        elif in_summary and line:
            k, v = line.split("\t", 1)
            out[k] = json.loads(v)
    return out
