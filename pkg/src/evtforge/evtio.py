"""Bit-exact binary event-stream files, windowed reads, dataset manifests.

File layout (little-endian, documented in FORMAT.md):
  header: magic "EVTS" (4s), version (u16), width (u16), height (u16),
          event_count (u64), t_offset (u64), flags (u32) -- 30 bytes
  records: event_count packed 13-byte records:
          t (u64, absolute microseconds), x (u16), y (u16), p (i8)

v1 stores absolute timestamps; t_offset is kept at 0 for forward
compatibility with a future delta encoding. Flag bit 0 marks the file
as sorted, which enables seek-based windowed reads.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import EVENT_RECORD_DTYPE, EventStream

HEADER = struct.Struct("<4sHHHQQI")
MAGIC = b"EVTS"
VERSION = 1
FLAG_SORTED = 0x1
RECORD_SIZE = EVENT_RECORD_DTYPE.itemsize

# Writer flush granularity; bounds memory when streaming very large files.
CHUNK_EVENTS = 1 << 20

CATEGORIES = ("driving", "flying", "hiking", "indoor", "underwater")


@dataclass(frozen=True)
class EvtFileHeader:
    width: int
    height: int
    event_count: int
    t_offset: int
    flags: int
    version: int = VERSION

    @property
    def sorted(self) -> bool:
        return bool(self.flags & FLAG_SORTED)


def write_stream(stream: EventStream, path, sorted_flag: bool = True) -> int:
    """Write a stream; returns total bytes.

    Refuses unsorted streams unless sorted_flag is explicitly cleared.
    The header is written with a zero count first and patched after the
    last chunk is flushed, so a partial file is detectable by its header.
    """
    if sorted_flag and not stream.is_sorted():
        raise ValueError("stream is not sorted; sort it or pass sorted_flag=False")
    flags = FLAG_SORTED if sorted_flag else 0
    records = stream.to_records()
    path = Path(path)
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, VERSION, stream.width, stream.height, 0, 0, flags))
        for lo in range(0, len(records), CHUNK_EVENTS):
            records[lo:lo + CHUNK_EVENTS].tofile(f)
            f.flush()
        f.seek(0)
        f.write(HEADER.pack(MAGIC, VERSION, stream.width, stream.height,
                            len(records), 0, flags))
        f.flush()
    return HEADER.size + RECORD_SIZE * len(records)


def read_header(path) -> EvtFileHeader:
    path = Path(path)
    with open(path, "rb") as f:
        raw = f.read(HEADER.size)
    if len(raw) < HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, width, height, count, t_offset, flags = HEADER.unpack(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    return EvtFileHeader(width, height, count, t_offset, flags, version)


def _check_size(path: Path, count: int) -> None:
    expected = HEADER.size + RECORD_SIZE * count
    actual = path.stat().st_size
    if actual != expected:
        raise ValueError(f"{path}: truncated file, expected {expected} bytes, got {actual}")


def _record_time(f, index: int) -> int:
    f.seek(HEADER.size + RECORD_SIZE * index)
    return struct.unpack("<Q", f.read(8))[0]


def _lower_bound(f, count: int, target: int) -> int:
    """First record index with t >= target, by seeking into the file."""
    lo, hi = 0, count
    while lo < hi:
        mid = (lo + hi) // 2
        if _record_time(f, mid) < target:
            lo = mid + 1
        else:
            hi = mid
    return lo


def read_stream(path, window: tuple[int, int] | None = None) -> EventStream:
    """Read a stream file, optionally restricted to t in [t0, t1).

    Windowed reads binary-search the sorted timestamps with seeks, then
    read only the covered span. Unsorted files fall back to a full read
    plus an in-memory filter.
    """
    path = Path(path)
    header = read_header(path)
    _check_size(path, header.event_count)
    source_id = path.stem
    with open(path, "rb") as f:
        if window is None:
            f.seek(HEADER.size)
            records = np.fromfile(f, dtype=EVENT_RECORD_DTYPE, count=header.event_count)
            return EventStream.from_records(header.width, header.height, records, source_id)
        t0, t1 = window
        if t1 <= t0 or header.event_count == 0:
            return EventStream.empty(header.width, header.height, source_id)
        if not header.sorted:
            f.seek(HEADER.size)
            records = np.fromfile(f, dtype=EVENT_RECORD_DTYPE, count=header.event_count)
            stream = EventStream.from_records(header.width, header.height, records, source_id)
            return stream.window(t0, t1)
        lo = _lower_bound(f, header.event_count, t0)
        hi = _lower_bound(f, header.event_count, t1)
        f.seek(HEADER.size + RECORD_SIZE * lo)
        records = np.fromfile(f, dtype=EVENT_RECORD_DTYPE, count=hi - lo)
    return EventStream.from_records(header.width, header.height, records, source_id)


def stream_time_range(path) -> tuple[int, int]:
    """First and last record timestamps; (0, 0) for an empty file."""
    path = Path(path)
    header = read_header(path)
    if header.event_count == 0:
        return 0, 0
    with open(path, "rb") as f:
        first = _record_time(f, 0)
        last = _record_time(f, header.event_count - 1)
    return first, last


@dataclass(frozen=True)
class SequenceInfo:
    name: str
    file: str
    width: int
    height: int
    event_count: int
    duration_us: int
    category: str
    ok: bool = True
    error: str = ""


@dataclass(frozen=True)
class Manifest:
    """Per-sequence stats plus totals, serialized as key-sorted text."""

    sequences: tuple[SequenceInfo, ...]

    @property
    def total_events(self) -> int:
        return sum(s.event_count for s in self.sequences if s.ok)

    @property
    def total_duration_us(self) -> int:
        return sum(s.duration_us for s in self.sequences if s.ok)

    def to_text(self) -> str:
        lines = []
        for s in self.sequences:
            prefix = f"sequence.{s.name}"
            if not s.ok:
                lines.append(f"{prefix}.status = failed")
                lines.append(f"{prefix}.error = {s.error}")
                continue
            lines.append(f"{prefix}.category = {s.category}")
            lines.append(f"{prefix}.duration_us = {s.duration_us}")
            lines.append(f"{prefix}.event_count = {s.event_count}")
            lines.append(f"{prefix}.file = {s.file}")
            lines.append(f"{prefix}.height = {s.height}")
            lines.append(f"{prefix}.width = {s.width}")
        lines.append(f"total.duration_us = {self.total_duration_us}")
        lines.append(f"total.event_count = {self.total_events}")
        lines.append(f"total.sequences = {sum(1 for s in self.sequences if s.ok)}")
        return "\n".join(sorted(lines)) + "\n"


def build_manifest(paths, categories) -> Manifest:
    """Aggregate header stats for a list of stream files.

    Unreadable files produce failed entries; the rest proceed.
    """
    paths = [Path(p) for p in paths]
    if len(categories) != len(paths):
        raise ValueError("need one category per file")
    for c in categories:
        if c not in CATEGORIES:
            raise ValueError(f"unknown category {c!r}, expected one of {CATEGORIES}")
    entries = []
    for path, category in zip(paths, categories):
        try:
            header = read_header(path)
            _check_size(path, header.event_count)
            t_first, t_last = stream_time_range(path)
            entries.append(SequenceInfo(path.stem, str(path), header.width, header.height,
                                        header.event_count, t_last - t_first, category))
        except (OSError, ValueError) as exc:
            entries.append(SequenceInfo(path.stem, str(path), 0, 0, 0, 0, category,
                                        ok=False, error=str(exc).replace("\n", " ")))
    return Manifest(tuple(entries))
