"""Event geometry: back-projection, rigid warps, and the warped-event image.

Events lift to 3D through the inverse intrinsics scaled by per-pixel
depth, warp rigidly, and splat back into a signed accumulation image
whose variance scores motion-compensation quality (sharper alignment =
higher variance = lower loss).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import CameraModel, DepthMap, EventStream, RigidPose
from .volume import read_grid, write_grid

IWE_MAGIC = b"EIWE"

# Points closer than this to the camera plane are dropped before the
# projective division.
Z_MIN_DEFAULT = 1e-3


@dataclass(frozen=True)
class PointCloud3D:
    """Back-projected events: 3D points with polarity and source timestamps."""

    points: np.ndarray
    polarity: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError("points must be (N, 3)")
        if len(self.polarity) != len(self.points) or len(self.t) != len(self.points):
            raise ValueError("polarity/timestamp length mismatch")

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def concatenate(cls, clouds) -> "PointCloud3D":
        return cls(np.concatenate([c.points for c in clouds]),
                   np.concatenate([c.polarity for c in clouds]),
                   np.concatenate([c.t for c in clouds]))


@dataclass(frozen=True)
class WarpedEventImage:
    """Signed per-pixel accumulation of projected events."""

    accum: np.ndarray

    def __post_init__(self):
        if self.accum.ndim != 2:
            raise ValueError("accum must be 2D")

    @property
    def width(self) -> int:
        return self.accum.shape[1]

    @property
    def height(self) -> int:
        return self.accum.shape[0]


def backproject(stream: EventStream, depth: DepthMap, cam: CameraModel):
    """Lift events to 3D: depth(u) * K^-1 * (x, y, 1).

    Events on invalid depth pixels (or outside the depth map, for streams
    read from untrusted files) are dropped, not fatal.
    Returns (cloud, dropped_count).
    """
    if depth.height < stream.height or depth.width < stream.width:
        raise ValueError("depth map smaller than sensor")
    xs = stream.x.astype(np.int64)
    ys = stream.y.astype(np.int64)
    in_bounds = (xs < depth.width) & (ys < depth.height)
    keep = in_bounds & depth.valid[np.minimum(ys, depth.height - 1),
                                   np.minimum(xs, depth.width - 1)]
    dropped = int(len(stream) - keep.sum())
    xs, ys = xs[keep], ys[keep]
    z = depth.depth[ys, xs]
    px = (xs.astype(np.float64) - cam.cx) / cam.fx
    py = (ys.astype(np.float64) - cam.cy) / cam.fy
    points = np.stack([px * z, py * z, z], axis=1)
    return PointCloud3D(points, stream.p[keep].copy(), stream.t[keep].copy()), dropped


def warp_points(cloud: PointCloud3D, pose: RigidPose) -> PointCloud3D:
    """Apply a rigid transform; polarity and timestamps carry through."""
    return PointCloud3D(pose.apply(cloud.points), cloud.polarity, cloud.t)


def project_points(cloud: PointCloud3D, cam: CameraModel):
    """Pinhole projection; returns (px, py, z) as float arrays."""
    z = cloud.points[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = cam.fx * cloud.points[:, 0] / z + cam.cx
        py = cam.fy * cloud.points[:, 1] / z + cam.cy
    return px, py, z


def project_to_iwe(cloud: PointCloud3D, cam: CameraModel, width: int, height: int,
                   z_min: float = Z_MIN_DEFAULT):
    """Splat projected points into a signed image with bilinear weights.

    Points behind the near plane or whose bilinear footprint would leave
    the image are dropped and counted, so the accumulated mass equals the
    polarity sum of the kept points exactly.
    Returns (iwe, dropped_count).
    """
    px, py, z = project_points(cloud, cam)
    keep = (z > z_min) & (px >= 0.0) & (px <= width - 1) & (py >= 0.0) & (py <= height - 1)
    dropped = int(len(cloud) - keep.sum())
    px, py = px[keep], py[keep]
    pol = cloud.polarity[keep].astype(np.float64)

    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    fx = px - x0
    fy = py - y0
    # at the far edge, the +1 neighbor weight is exactly 0; clamping the
    # index keeps the scatter in range without losing mass
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)

    accum = np.zeros((height, width))
    np.add.at(accum, (y0, x0), pol * (1.0 - fx) * (1.0 - fy))
    np.add.at(accum, (y0, x1), pol * fx * (1.0 - fy))
    np.add.at(accum, (y1, x0), pol * (1.0 - fx) * fy)
    np.add.at(accum, (y1, x1), pol * fx * fy)
    return WarpedEventImage(accum), dropped


def accumulate_events(stream: EventStream, width: int, height: int) -> WarpedEventImage:
    """Plain signed accumulation of raw events at their integer pixels."""
    accum = np.zeros((height, width))
    np.add.at(accum, (stream.y.astype(np.int64), stream.x.astype(np.int64)),
              stream.p.astype(np.float64))
    return WarpedEventImage(accum)


def contrast_loss(iwe: WarpedEventImage) -> float:
    """Negative variance of the accumulation image over all pixels."""
    if iwe.accum.size == 0:
        raise ValueError("empty image")
    return float(-np.var(iwe.accum))


def write_iwe(iwe: WarpedEventImage, path, t_start: int = 0, t_end: int = 1) -> int:
    """Export as a one-bin grid container with the EIWE magic."""
    return write_grid(iwe.accum[np.newaxis, :, :], t_start, t_end, path, IWE_MAGIC)


def read_iwe(path) -> WarpedEventImage:
    data, _, _ = read_grid(path, IWE_MAGIC)
    if data.shape[0] != 1:
        raise ValueError(f"{path}: warped-event image must have exactly 1 bin")
    return WarpedEventImage(data[0])


def render_pgm(iwe: WarpedEventImage, path) -> None:
    """Affine-normalized 8-bit PGM render for visual inspection."""
    a = iwe.accum
    lo, hi = float(a.min()), float(a.max())
    if hi > lo:
        img = np.rint((a - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        img = np.zeros(a.shape, dtype=np.uint8)
    header = f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())
