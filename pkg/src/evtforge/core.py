"""Shared domain types: events, streams, cameras, poses, depth maps.

Everything here is immutable after construction and safe to share across
threads. Timestamps are integer microseconds throughout; formulas that
need continuous time convert at the call site.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

# Packed on-disk / in-memory record layout, little-endian, 13 bytes.
EVENT_RECORD_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "<i1")])

# Per-element tolerance for rotation orthonormality and determinant checks.
ORTHONORMALITY_TOL = 1e-9


@dataclass(frozen=True)
class Event:
    """One asynchronous brightness-change record.

    x, y: pixel column/row; t: microseconds; p: polarity, strictly +1 or -1.
    """

    x: int
    y: int
    t: int
    p: int

    def __post_init__(self):
        if self.p not in (-1, 1):
            raise ValueError(f"polarity must be +1 or -1, got {self.p}")
        if self.x < 0 or self.y < 0 or self.t < 0:
            raise ValueError("event coordinates and timestamp must be non-negative")


def _as_readonly(arr: np.ndarray, dtype) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=dtype)
    if out is arr:
        out = out.copy()
    out.setflags(write=False)
    return out


class EventStream:
    """Ordered event collection with sensor geometry.

    Column storage: x, y (uint16), t (uint64 microseconds), p (int8, +/-1).
    Polarity is enforced on construction; sortedness and pixel bounds are
    diagnosed by :func:`validate_stream` so that malformed data read from
    external sources can be inspected rather than rejected blindly.

    Canonical order is (t, y, x, p) ascending; the (y, x, p) tie-break makes
    parallel generation deterministic.
    """

    __slots__ = ("width", "height", "x", "y", "t", "p", "source_id")

    def __init__(self, width, height, x, y, t, p, source_id=""):
        if width <= 0 or height <= 0:
            raise ValueError("sensor dimensions must be positive")
        x = _as_readonly(np.asarray(x), np.uint16)
        y = _as_readonly(np.asarray(y), np.uint16)
        t = _as_readonly(np.asarray(t), np.uint64)
        p = _as_readonly(np.asarray(p), np.int8)
        n = len(t)
        if not (len(x) == len(y) == len(p) == n):
            raise ValueError("event columns must have equal length")
        if n and not np.isin(p, (-1, 1)).all():
            bad = int(np.nonzero(~np.isin(p, (-1, 1)))[0][0])
            raise ValueError(f"polarity must be +1 or -1, got {p[bad]} at index {bad}")
        self.width = int(width)
        self.height = int(height)
        self.x = x
        self.y = y
        self.t = t
        self.p = p
        self.source_id = str(source_id)

    @classmethod
    def empty(cls, width, height, source_id="") -> "EventStream":
        return cls(width, height, [], [], [], [], source_id)

    @classmethod
    def from_records(cls, width, height, records: np.ndarray, source_id="") -> "EventStream":
        records = np.asarray(records, dtype=EVENT_RECORD_DTYPE)
        return cls(width, height, records["x"].copy(), records["y"].copy(),
                   records["t"].copy(), records["p"].copy(), source_id)

    def to_records(self) -> np.ndarray:
        rec = np.empty(len(self), dtype=EVENT_RECORD_DTYPE)
        rec["t"] = self.t
        rec["x"] = self.x
        rec["y"] = self.y
        rec["p"] = self.p
        return rec

    def __len__(self) -> int:
        return len(self.t)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (self.width == other.width and self.height == other.height
                and np.array_equal(self.t, other.t) and np.array_equal(self.x, other.x)
                and np.array_equal(self.y, other.y) and np.array_equal(self.p, other.p))

    def events(self) -> Iterator[Event]:
        """Iterate events one by one; intended for tests and small streams."""
        for i in range(len(self)):
            yield Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    def sort_order(self) -> np.ndarray:
        return np.lexsort((self.p, self.x, self.y, self.t))

    def is_sorted(self) -> bool:
        return _first_order_violation(self.t, self.y, self.x, self.p) < 0

    def sorted_copy(self) -> "EventStream":
        order = self.sort_order()
        return EventStream(self.width, self.height, self.x[order], self.y[order],
                           self.t[order], self.p[order], self.source_id)

    def window(self, t_start: int, t_end: int) -> "EventStream":
        """Events with t in [t_start, t_end)."""
        t_start = max(int(t_start), 0)
        t_end = max(int(t_end), 0)
        mask = (self.t >= np.uint64(t_start)) & (self.t < np.uint64(t_end))
        return EventStream(self.width, self.height, self.x[mask], self.y[mask],
                           self.t[mask], self.p[mask], self.source_id)


def _first_order_violation(t, y, x, p) -> int:
    """First index breaking (t, y, x, p) ascending order, or -1."""
    if len(t) < 2:
        return -1
    lt = t[1:] < t[:-1]
    eq = t[1:] == t[:-1]
    ly = y[1:] < y[:-1]
    ey = y[1:] == y[:-1]
    lx = x[1:] < x[:-1]
    ex = x[1:] == x[:-1]
    lp = p[1:] < p[:-1]
    bad = lt | (eq & (ly | (ey & (lx | (ex & lp)))))
    idx = np.nonzero(bad)[0]
    return int(idx[0]) + 1 if idx.size else -1


def validate_stream(stream: EventStream) -> list[str]:
    """Diagnostic invariant check; empty list means the stream is valid.

    Each violation message names the first offending index.
    """
    violations = []
    bad = np.nonzero(stream.x >= stream.width)[0]
    if bad.size:
        i = int(bad[0])
        violations.append(f"x bounds violation at index {i}: x={int(stream.x[i])} >= width={stream.width}")
    bad = np.nonzero(stream.y >= stream.height)[0]
    if bad.size:
        i = int(bad[0])
        violations.append(f"y bounds violation at index {i}: y={int(stream.y[i])} >= height={stream.height}")
    bad = np.nonzero(~np.isin(stream.p, (-1, 1)))[0]
    if bad.size:
        violations.append(f"polarity violation at index {int(bad[0])}")
    i = _first_order_violation(stream.t, stream.y, stream.x, stream.p)
    if i >= 0:
        violations.append(f"order violation at index {i}")
    return violations


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    def inverse_matrix(self) -> np.ndarray:
        return np.array([[1.0 / self.fx, 0.0, -self.cx / self.fx],
                         [0.0, 1.0 / self.fy, -self.cy / self.fy],
                         [0.0, 0.0, 1.0]])


class RigidPose:
    """Rigid transform: rotation (3x3, det +1) plus translation in meters."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation, translation):
        r = _as_readonly(np.asarray(rotation, dtype=np.float64), np.float64)
        t = _as_readonly(np.asarray(translation, dtype=np.float64), np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation a 3-vector")
        err = np.abs(r @ r.T - np.eye(3)).max()
        if err > ORTHONORMALITY_TOL:
            raise ValueError(f"rotation not orthonormal (max error {err:.3e})")
        det = float(np.linalg.det(r))
        if abs(det - 1.0) > ORTHONORMALITY_TOL:
            raise ValueError(f"rotation determinant {det} != 1")
        self.rotation = r
        self.translation = t

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_axis_angle(cls, rvec, tvec=(0.0, 0.0, 0.0)) -> "RigidPose":
        """Rodrigues rotation from an axis-angle vector (radians)."""
        rvec = np.asarray(rvec, dtype=np.float64)
        theta = float(np.linalg.norm(rvec))
        if theta < 1e-15:
            return cls(np.eye(3), tvec)
        k = rvec / theta
        kx = np.array([[0.0, -k[2], k[1]],
                       [k[2], 0.0, -k[0]],
                       [-k[1], k[0], 0.0]])
        r = np.eye(3) + np.sin(theta) * kx + (1.0 - np.cos(theta)) * (kx @ kx)
        return cls(r, tvec)

    def compose(self, first: "RigidPose") -> "RigidPose":
        """Transform equivalent to applying `first`, then this pose."""
        return RigidPose(self.rotation @ first.rotation,
                         self.rotation @ first.translation + self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation


class DepthMap:
    """Per-pixel metric depth with a validity mask.

    depth > 0 wherever valid; invalid pixels are excluded from every
    consumer (losses, back-projection).
    """

    __slots__ = ("depth", "valid")

    def __init__(self, depth, valid):
        depth = _as_readonly(np.asarray(depth, dtype=np.float64), np.float64)
        valid = _as_readonly(np.asarray(valid, dtype=bool), bool)
        if depth.ndim != 2 or depth.shape != valid.shape:
            raise ValueError("depth and valid must be 2D arrays of equal shape")
        if valid.any() and not (depth[valid] > 0).all():
            raise ValueError("depth must be positive at every valid pixel")
        self.depth = depth
        self.valid = valid

    @classmethod
    def constant(cls, width: int, height: int, value: float) -> "DepthMap":
        return cls(np.full((height, width), float(value)), np.ones((height, width), bool))

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def valid_count(self) -> int:
        return int(self.valid.sum())
