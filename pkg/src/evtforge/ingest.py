"""Frame-sequence loading and log-irradiance conversion.

Input frames are treated as linear irradiance proxies; no gamma
linearization is applied. Color inputs are collapsed to luma with
Rec. 601 weights.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import imageio.v3 as iio
import numpy as np

DEFAULT_EPS_LOG = 1e-3
FRAME_SUFFIXES = (".pgm", ".png")
TIMESTAMP_SIDECAR = "timestamps.txt"

# Rec. 601 luma weights for collapsing color inputs to grayscale.
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class Frame:
    """Linear-intensity image, values in [0, 1], timestamped in microseconds."""

    intensity: np.ndarray
    t: int

    def __post_init__(self):
        if self.intensity.ndim != 2:
            raise ValueError("frame intensity must be a 2D array")
        lo = float(self.intensity.min(initial=0.0))
        hi = float(self.intensity.max(initial=0.0))
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"intensity out of [0, 1]: range [{lo}, {hi}]")

    @property
    def width(self) -> int:
        return self.intensity.shape[1]

    @property
    def height(self) -> int:
        return self.intensity.shape[0]


@dataclass(frozen=True)
class LogFrame:
    """Log-intensity image: log_l = ln(intensity + eps_log)."""

    log_l: np.ndarray
    t: int

    @property
    def width(self) -> int:
        return self.log_l.shape[1]

    @property
    def height(self) -> int:
        return self.log_l.shape[0]


def to_log(frame: Frame, eps_log: float = DEFAULT_EPS_LOG) -> LogFrame:
    """Map a linear frame to log intensity; eps_log > 0 keeps ln finite at 0."""
    if eps_log <= 0:
        raise ValueError("eps_log must be positive")
    return LogFrame(np.log(frame.intensity + eps_log), frame.t)


def from_log(log_frame: LogFrame, eps_log: float = DEFAULT_EPS_LOG) -> Frame:
    """Inverse of :func:`to_log`; round-trips within 1e-12."""
    if eps_log <= 0:
        raise ValueError("eps_log must be positive")
    return Frame(np.clip(np.exp(log_frame.log_l) - eps_log, 0.0, 1.0), log_frame.t)


def _decode_gray(path: Path) -> np.ndarray:
    try:
        raw = iio.imread(path)
    except Exception as exc:
        raise ValueError(f"unreadable frame file {path}: {exc}") from exc
    arr = np.asarray(raw)
    if arr.ndim == 3:
        arr = arr[..., :3].astype(np.float64) @ _LUMA
        # luma of integer channels keeps the original scale
        max_val = float(np.iinfo(raw.dtype).max) if np.issubdtype(raw.dtype, np.integer) else 1.0
        return np.clip(arr / max_val, 0.0, 1.0)
    if np.issubdtype(arr.dtype, np.integer):
        return arr.astype(np.float64) / float(np.iinfo(arr.dtype).max)
    return np.clip(arr.astype(np.float64), 0.0, 1.0)


def _read_sidecar(path: Path, n_frames: int) -> list[int]:
    lines = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
    if len(lines) != n_frames:
        raise ValueError(f"timestamp sidecar has {len(lines)} entries for {n_frames} frames")
    try:
        times = [int(ln) for ln in lines]
    except ValueError as exc:
        raise ValueError(f"timestamp sidecar {path} contains a non-integer line") from exc
    for i in range(1, len(times)):
        if times[i] <= times[i - 1]:
            raise ValueError(f"non-monotone timestamps in sidecar at line {i + 1}")
    return times


def load_sequence(directory, fps_hint: float = 30.0) -> list[Frame]:
    """Load a lexicographically ordered grayscale frame sequence.

    A `timestamps.txt` sidecar (one decimal microsecond value per line)
    overrides the uniform spacing derived from fps_hint. Mixed resolutions
    and non-monotone sidecar timestamps are fatal.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"cannot read frames: {directory} is not a directory")
    paths = sorted(p for p in directory.iterdir() if p.suffix.lower() in FRAME_SUFFIXES)
    if not paths:
        raise FileNotFoundError(f"cannot read frames: no {'/'.join(FRAME_SUFFIXES)} files in {directory}")

    sidecar = directory / TIMESTAMP_SIDECAR
    if sidecar.is_file():
        times = _read_sidecar(sidecar, len(paths))
    else:
        if fps_hint <= 0:
            raise ValueError("fps_hint must be positive when no timestamp sidecar exists")
        times = [int(i * 1_000_000 / fps_hint) for i in range(len(paths))]
        if len(times) > 1 and times[1] == times[0]:
            raise ValueError(f"fps_hint {fps_hint} too high for microsecond timestamps")

    frames = []
    shape = None
    for path, t in zip(paths, times):
        intensity = _decode_gray(path)
        if shape is None:
            shape = intensity.shape
        elif intensity.shape != shape:
            raise ValueError(f"frame {path} resolution {intensity.shape} != first frame {shape}")
        frames.append(Frame(intensity, t))
    return frames
