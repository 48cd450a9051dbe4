"""Adaptive temporal sampling driven by the peak brightness-change rate.

The step rule is dt = contrast / max_pixel_rate, clamped to
[dt_min, dt_max]. A rate floor keeps the rule finite on static scenes,
and dt_max bounds the stride so they still get sampled.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, replace

import numpy as np

from .ingest import LogFrame

DEFAULT_CONTRAST = 0.15
DEFAULT_DT_MIN_US = 100
DEFAULT_RATE_FLOOR = 1e-6


@dataclass(frozen=True)
class SamplerConfig:
    """Knobs for the adaptive sampler.

    dt_max_us=None derives the bound from the source sequence (twice the
    median inter-frame interval) when the plan is built.
    """

    contrast_c: float = DEFAULT_CONTRAST
    dt_min_us: int = DEFAULT_DT_MIN_US
    dt_max_us: int | None = None
    rate_floor: float = DEFAULT_RATE_FLOOR

    def __post_init__(self):
        if self.contrast_c <= 0:
            raise ValueError("contrast_c must be positive")
        if self.dt_min_us <= 0:
            raise ValueError("dt_min_us must be positive")
        if self.rate_floor <= 0:
            raise ValueError("rate_floor must be positive")
        if self.dt_max_us is not None and self.dt_max_us < self.dt_min_us:
            raise ValueError("dt_max_us must be >= dt_min_us")

    def resolved(self, frame_times) -> "SamplerConfig":
        """Fill dt_max_us from the source frame spacing when unset."""
        if self.dt_max_us is not None:
            return self
        gaps = np.diff(np.asarray(frame_times, dtype=np.int64))
        if gaps.size == 0:
            raise ValueError("need at least 2 frames to derive dt_max_us")
        dt_max = int(round(2.0 * float(np.median(gaps))))
        return replace(self, dt_max_us=max(dt_max, self.dt_min_us))


@dataclass(frozen=True)
class SamplePlan:
    """Strictly increasing evaluation times, first entry = sequence start."""

    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.uint64)
        object.__setattr__(self, "times", times)
        if times.size and (np.diff(times.astype(np.int64)) <= 0).any():
            raise ValueError("plan times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)


def brightness_rate(prev: LogFrame, next_frame: LogFrame, rate_floor: float = DEFAULT_RATE_FLOOR) -> float:
    """Peak |d log L / dt| between two frames, in log-units per second.

    Forward finite difference over the frame pair; never returns below
    rate_floor so the sampling step stays finite.
    """
    if prev.t >= next_frame.t:
        raise ValueError(f"frames out of order: {prev.t} >= {next_frame.t}")
    if prev.log_l.shape != next_frame.log_l.shape:
        raise ValueError("frame resolutions differ")
    dt_s = (next_frame.t - prev.t) / 1e6
    peak = float(np.abs(next_frame.log_l - prev.log_l).max(initial=0.0)) / dt_s
    return max(peak, rate_floor)


def next_sample_time(t_k: int, rate: float, cfg: SamplerConfig) -> int:
    """Apply the adaptive step rule once; returns a time strictly after t_k."""
    if rate <= 0:
        raise ValueError("rate must be positive")
    if cfg.dt_max_us is None:
        raise ValueError("dt_max_us unresolved; call cfg.resolved(frame_times) first")
    dt_us = cfg.contrast_c / rate * 1e6
    dt_us = min(max(dt_us, float(cfg.dt_min_us)), float(cfg.dt_max_us))
    return t_k + max(1, int(round(dt_us)))


def build_plan(frames: list[LogFrame], cfg: SamplerConfig) -> SamplePlan:
    """Iterate the step rule across a source sequence.

    Rates between planned times come from the bracketing source-frame
    pair. Every planned time lies in [first.t, last.t]; the final step is
    clamped to the sequence end, so the last interval may be shorter than
    dt_min_us.
    """
    if len(frames) < 2:
        raise ValueError("need at least 2 frames to build a plan")
    frame_times = [f.t for f in frames]
    cfg = cfg.resolved(frame_times)
    rates = [brightness_rate(frames[i], frames[i + 1], cfg.rate_floor)
             for i in range(len(frames) - 1)]

    t_last = frame_times[-1]
    times = [frame_times[0]]
    t = times[0]
    while t < t_last:
        i = min(max(bisect.bisect_right(frame_times, t) - 1, 0), len(rates) - 1)
        t_next = next_sample_time(t, rates[i], cfg)
        t = min(t_next, t_last)
        times.append(t)
    return SamplePlan(np.array(times, dtype=np.uint64))


def sample_log_frames(frames: list[LogFrame], plan: SamplePlan) -> list[LogFrame]:
    """Evaluate log frames at planned times by linear interpolation in t."""
    if len(frames) < 2:
        raise ValueError("need at least 2 frames to interpolate")
    frame_times = [f.t for f in frames]
    out = []
    for t in plan.times.tolist():
        if t < frame_times[0] or t > frame_times[-1]:
            raise ValueError(f"plan time {t} outside source range")
        i = min(max(bisect.bisect_right(frame_times, t) - 1, 0), len(frames) - 2)
        t0, t1 = frame_times[i], frame_times[i + 1]
        alpha = (t - t0) / (t1 - t0)
        if alpha == 0.0:
            log_l = frames[i].log_l
        elif alpha == 1.0:
            log_l = frames[i + 1].log_l
        else:
            log_l = (1.0 - alpha) * frames[i].log_l + alpha * frames[i + 1].log_l
        out.append(LogFrame(log_l, t))
    return out
