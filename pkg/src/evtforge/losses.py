"""Depth-supervision losses: scale-invariant, gradient-matching, composites.

The residual is the absolute depth error in linear depth. A log-residual
variant is available behind a flag for comparison with the classical
formulation. Teacher = si + lambda * grad; student = contrast +
(1 - lambda) * L1(teacher depth, student depth).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DepthMap

DEFAULT_LAMBDA = 0.6
DEFAULT_SCALES = 4

# Depth-map file container: magic(4s) height(u16) width(u16), little-endian,
# then H*W float32 values row-major, then the validity mask packed 8 pixels
# per byte, row-major, LSB first.
DEPTH_HEADER = struct.Struct("<4sHH")
DEPTH_MAGIC = b"EDPT"

@dataclass(frozen=True)
class LossReport:
    """Loss components plus their weighted combinations.

    Fields not produced by a given operation stay 0, which keeps the
    recombination identities teacher = si + lambda*grad and
    student = contrast + (1-lambda)*l1_distill valid for every report.
    """

    si: float = 0.0
    grad: float = 0.0
    contrast: float = 0.0
    l1_distill: float = 0.0
    teacher: float = 0.0
    student: float = 0.0
    lambda_weight: float = DEFAULT_LAMBDA

    def to_text(self) -> str:
        keys = ("contrast", "grad", "l1_distill", "lambda_weight", "si", "student", "teacher")
        return "\n".join(f"{k} = {getattr(self, k):.17g}" for k in keys) + "\n"


def _joint_residual(pred: DepthMap, gt: DepthMap, log_residual: bool):
    if pred.depth.shape != gt.depth.shape:
        raise ValueError(f"resolution mismatch: {pred.depth.shape} vs {gt.depth.shape}")
    valid = pred.valid & gt.valid
    if log_residual:
        residual = np.zeros(pred.depth.shape)
        residual[valid] = np.abs(np.log(pred.depth[valid]) - np.log(gt.depth[valid]))
    else:
        residual = np.abs(pred.depth - gt.depth)
    return residual, valid


def si_loss(pred: DepthMap, gt: DepthMap, log_residual: bool = False) -> float:
    """Scale-invariant loss: mean(R^2) - mean(R)^2 over jointly valid pixels.

    Zero for any constant residual field; tiny negative float residue is
    clamped so the variance form stays non-negative.
    """
    residual, valid = _joint_residual(pred, gt, log_residual)
    n = int(valid.sum())
    if n == 0:
        raise ValueError("no valid overlap between depth maps")
    r = residual[valid]
    value = float(np.dot(r, r)) / n - (float(r.sum()) / n) ** 2
    return value if value > 0.0 else 0.0


def _sobel_terms(residual: np.ndarray, valid: np.ndarray) -> float:
    """Sum |sobel_x| + |sobel_y| over pixels whose 3x3 window is fully valid."""
    h, w = residual.shape
    if h < 3 or w < 3:
        return 0.0
    r = residual
    gx = ((r[:-2, 2:] + 2.0 * r[1:-1, 2:] + r[2:, 2:])
          - (r[:-2, :-2] + 2.0 * r[1:-1, :-2] + r[2:, :-2]))
    gy = ((r[2:, :-2] + 2.0 * r[2:, 1:-1] + r[2:, 2:])
          - (r[:-2, :-2] + 2.0 * r[:-2, 1:-1] + r[:-2, 2:]))
    window_ok = np.ones((h - 2, w - 2), dtype=bool)
    for dy in range(3):
        for dx in range(3):
            window_ok &= valid[dy:h - 2 + dy, dx:w - 2 + dx]
    return float((np.abs(gx) + np.abs(gy))[window_ok].sum())


def _pool2(residual: np.ndarray, valid: np.ndarray):
    """2x2 average pooling; odd trailing row/column is cropped. A pooled
    pixel is valid only when all four children are."""
    h, w = residual.shape
    h2, w2 = h // 2, w // 2
    r = residual[:h2 * 2, :w2 * 2]
    v = valid[:h2 * 2, :w2 * 2]
    pooled = 0.25 * (r[0::2, 0::2] + r[1::2, 0::2] + r[0::2, 1::2] + r[1::2, 1::2])
    pooled_valid = v[0::2, 0::2] & v[1::2, 0::2] & v[0::2, 1::2] & v[1::2, 1::2]
    return pooled, pooled_valid


def grad_loss(pred: DepthMap, gt: DepthMap, scales: int = DEFAULT_SCALES,
              log_residual: bool = False) -> float:
    """Multi-scale gradient-matching loss on the residual map.

    Sobel responses are summed over every scale (residual downsampled by
    2x average pooling per scale) and normalized once by the full-
    resolution valid-pixel count. Any 3x3 window touching an invalid
    pixel or the border is skipped at that scale.
    """
    if scales < 1:
        raise ValueError("scales must be >= 1")
    residual, valid = _joint_residual(pred, gt, log_residual)
    n = int(valid.sum())
    if n == 0:
        raise ValueError("no valid overlap between depth maps")
    total = 0.0
    for s in range(scales):
        total += _sobel_terms(residual, valid)
        if s + 1 < scales:
            residual, valid = _pool2(residual, valid)
            if min(residual.shape) < 3:
                break
    return total / n


def teacher_loss(pred: DepthMap, gt: DepthMap, lambda_weight: float = DEFAULT_LAMBDA,
                 scales: int = DEFAULT_SCALES, log_residual: bool = False) -> LossReport:
    """Supervised composite: si + lambda * grad."""
    if not 0.0 <= lambda_weight <= 1.0:
        raise ValueError("lambda_weight must be in [0, 1]")
    si = si_loss(pred, gt, log_residual)
    grad = grad_loss(pred, gt, scales, log_residual)
    return LossReport(si=si, grad=grad, teacher=si + lambda_weight * grad,
                      lambda_weight=lambda_weight)


def student_loss(contrast: float, d_teacher: DepthMap, d_student: DepthMap,
                 lambda_weight: float = DEFAULT_LAMBDA) -> LossReport:
    """Self-supervised composite: contrast + (1 - lambda) * L1 distillation.

    The distillation term is the mean absolute gap between the two depth
    predictions over jointly valid pixels.
    """
    if not 0.0 <= lambda_weight <= 1.0:
        raise ValueError("lambda_weight must be in [0, 1]")
    if d_teacher.depth.shape != d_student.depth.shape:
        raise ValueError("resolution mismatch between depth predictions")
    valid = d_teacher.valid & d_student.valid
    n = int(valid.sum())
    if n == 0:
        raise ValueError("no valid overlap between depth maps")
    l1 = float(np.abs(d_teacher.depth[valid] - d_student.depth[valid]).mean())
    return LossReport(contrast=contrast, l1_distill=l1,
                      student=contrast + (1.0 - lambda_weight) * l1,
                      lambda_weight=lambda_weight)


def write_depth(dm: DepthMap, path) -> int:
    """Write the EDPT depth container; returns byte count."""
    header = DEPTH_HEADER.pack(DEPTH_MAGIC, dm.height, dm.width)
    data = np.where(dm.valid, dm.depth, 0.0).astype("<f4")
    mask = np.packbits(dm.valid.reshape(-1), bitorder="little")
    with open(Path(path), "wb") as f:
        f.write(header)
        data.tofile(f)
        f.write(mask.tobytes())
    return len(header) + data.nbytes + mask.nbytes


def read_depth(path) -> DepthMap:
    path = Path(path)
    with open(path, "rb") as f:
        raw = f.read(DEPTH_HEADER.size)
        if len(raw) < DEPTH_HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, height, width = DEPTH_HEADER.unpack(raw)
        if magic != DEPTH_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        data = np.fromfile(f, dtype="<f4", count=height * width)
        if data.size != height * width:
            raise ValueError(f"{path}: truncated depth data")
        n_mask_bytes = (height * width + 7) // 8
        mask_bytes = np.fromfile(f, dtype=np.uint8, count=n_mask_bytes)
        if mask_bytes.size != n_mask_bytes:
            raise ValueError(f"{path}: truncated validity mask")
    valid = np.unpackbits(mask_bytes, count=height * width, bitorder="little").astype(bool)
    valid = valid.reshape(height, width)
    depth = data.astype(np.float64).reshape(height, width)
    # invalid pixels are stored as 0; give them a positive placeholder so
    # the DepthMap invariant (depth > 0 where valid) is the only gate
    depth[~valid] = 1.0
    return DepthMap(depth, valid)
