import numpy as np
import pytest

from evtforge.core import CameraModel, EventStream
from evtforge.ingest import Frame, LogFrame, to_log


def make_moving_edge_frames(width=24, height=16, n_frames=12, fps=30.0,
                            speed_px_per_frame=1.5, ramp_px=3.0,
                            lo=0.1, hi=0.9, x0=2.0):
    """Horizontal ramp edge translating right at constant speed."""
    xs = np.arange(width, dtype=np.float64)
    frames = []
    for i in range(n_frames):
        edge = x0 + speed_px_per_frame * i
        profile = np.clip((xs - edge) / ramp_px, 0.0, 1.0)
        intensity = np.tile(lo + (hi - lo) * profile, (height, 1))
        frames.append(Frame(intensity, int(i * 1_000_000 / fps)))
    return frames


def make_log_frames(values, times):
    """LogFrames straight from per-frame scalar or array log values."""
    frames = []
    for v, t in zip(values, times):
        arr = np.asarray(v, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        frames.append(LogFrame(arr, int(t)))
    return frames


def random_stream(rng, width=16, height=12, n=200, t_max=1_000_000):
    t = np.sort(rng.integers(0, t_max, size=n).astype(np.uint64))
    x = rng.integers(0, width, size=n).astype(np.uint16)
    y = rng.integers(0, height, size=n).astype(np.uint16)
    p = rng.choice([-1, 1], size=n).astype(np.int8)
    return EventStream(width, height, x, y, t, p, "random").sorted_copy()


@pytest.fixture
def moving_edge_frames():
    return make_moving_edge_frames()


@pytest.fixture
def moving_edge_logs(moving_edge_frames):
    return [to_log(f) for f in moving_edge_frames]


@pytest.fixture
def simple_camera():
    return CameraModel(100.0, 100.0, 50.0, 50.0)
