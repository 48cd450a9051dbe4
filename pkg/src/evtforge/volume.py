"""Spatiotemporal event tensors: linearly weighted accumulation into B bins.

Each event's normalized time t* = (B-1) * (t - t_start) / (t_end - t_start)
splits its polarity between the two neighboring bins with tent weights
(1 - frac, frac), a partition of unity on [0, B-1], so signed mass is
conserved. Normalization uses the window bounds, not the first/last event,
which keeps near-empty windows stable.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import EventStream

DEFAULT_BINS = 5

# Shared flat-grid container layout (EVOL volumes, EIWE warped-event images):
# magic(4s) version(u16) bins(u16) height(u16) width(u16) t_start(u64) t_end(u64),
# little-endian, followed by bins*height*width float32 values in (b, y, x) order.
GRID_HEADER = struct.Struct("<4sHHHHQQ")
GRID_VERSION = 1
VOLUME_MAGIC = b"EVOL"


@dataclass(frozen=True)
class EventVolume:
    """B x H x W signed accumulation grid over [t_start, t_end]."""

    data: np.ndarray
    t_start: int
    t_end: int

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError("volume data must be (bins, height, width)")
        if self.t_start >= self.t_end:
            raise ValueError("t_start must be before t_end")
        if not np.isfinite(self.data).all():
            raise ValueError("volume contains non-finite values")

    @property
    def bins(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def default_window_us(fps: float, n_frames: int) -> int:
    """Window duration covering n_frames at the given rate, floored to us."""
    if fps <= 0:
        raise ValueError("fps must be positive")
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    return int(n_frames * 1_000_000 / fps)


def build_volume(stream: EventStream, t_start: int, t_end: int,
                 bins: int = DEFAULT_BINS, shards: int = 1) -> EventVolume:
    """Accumulate in-window events into a B-bin tent-weighted tensor.

    Events with t in [t_start, t_end] contribute; t = t_end maps to the
    last bin. Accumulation runs over `shards` contiguous event chunks
    summed in shard order, so results are bit-reproducible for a fixed
    shard count.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if t_start < 0 or t_start >= t_end:
        raise ValueError("need 0 <= t_start < t_end")
    if shards < 1:
        raise ValueError("shards must be >= 1")

    mask = (stream.t >= np.uint64(t_start)) & (stream.t <= np.uint64(t_end))
    t = (stream.t[mask] - np.uint64(t_start)).astype(np.float64)
    x = stream.x[mask].astype(np.int64)
    y = stream.y[mask].astype(np.int64)
    pol = stream.p[mask].astype(np.float64)

    t_star = (bins - 1) * t / float(t_end - t_start)
    b0 = np.floor(t_star).astype(np.int64)
    frac = t_star - b0
    # at t* == bins-1 the upper neighbor has weight 0; clamp keeps it in range
    b1 = np.minimum(b0 + 1, bins - 1)

    n = len(t)
    bounds = [n * s // shards for s in range(shards + 1)]
    data = np.zeros((bins, stream.height, stream.width))
    for s in range(shards):
        lo, hi = bounds[s], bounds[s + 1]
        if lo == hi:
            continue
        part = np.zeros_like(data)
        np.add.at(part, (b0[lo:hi], y[lo:hi], x[lo:hi]), pol[lo:hi] * (1.0 - frac[lo:hi]))
        np.add.at(part, (b1[lo:hi], y[lo:hi], x[lo:hi]), pol[lo:hi] * frac[lo:hi])
        data += part
    return EventVolume(data, int(t_start), int(t_end))


def write_grid(data: np.ndarray, t_start: int, t_end: int, path, magic: bytes) -> int:
    """Write a (B, H, W) grid in the shared float32 container; returns bytes."""
    data = np.ascontiguousarray(data, dtype=np.float32)
    bins, height, width = data.shape
    header = GRID_HEADER.pack(magic, GRID_VERSION, bins, height, width, t_start, t_end)
    path = Path(path)
    with open(path, "wb") as f:
        f.write(header)
        data.tofile(f)
    return len(header) + data.nbytes


def read_grid(path, magic: bytes):
    """Read a grid container; returns (data float64, t_start, t_end)."""
    path = Path(path)
    with open(path, "rb") as f:
        raw = f.read(GRID_HEADER.size)
        if len(raw) < GRID_HEADER.size:
            raise ValueError(f"{path}: truncated header")
        got_magic, version, bins, height, width, t_start, t_end = GRID_HEADER.unpack(raw)
        if got_magic != magic:
            raise ValueError(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
        if version != GRID_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        expected = bins * height * width
        data = np.fromfile(f, dtype="<f4", count=expected)
        if data.size != expected:
            raise ValueError(f"{path}: truncated data, expected {expected} values, got {data.size}")
    return data.astype(np.float64).reshape(bins, height, width), int(t_start), int(t_end)


def write_volume(vol: EventVolume, path) -> int:
    return write_grid(vol.data, vol.t_start, vol.t_end, path, VOLUME_MAGIC)


def read_volume(path) -> EventVolume:
    data, t_start, t_end = read_grid(path, VOLUME_MAGIC)
    return EventVolume(data, t_start, t_end)
