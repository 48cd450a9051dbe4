"""Per-pixel threshold-crossing event emission from a log-frame sequence.

Each pixel keeps the log level of its last emitted event (the reference
ladder). When a new frame moves the pixel by k >= 1 full contrast steps
from that reference, k events fire with the step's sign, timestamped by
linear interpolation of the log trajectory between the (interpolated)
frame pair. The reference then advances by exactly k steps, preserving
the sub-threshold residual so slow drifts eventually fire.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import EventStream
from .ingest import LogFrame

# Rows per work tile; fixed so tiling never depends on the thread count.
_TILE_ROWS = 16


@dataclass
class PixelState:
    """Per-pixel reference ladder: last-event log level and its timestamp."""

    ref_log: np.ndarray
    ref_t: np.ndarray

    @classmethod
    def initial(cls, first: LogFrame) -> "PixelState":
        return cls(first.log_l.astype(np.float64, copy=True),
                   np.full(first.log_l.shape, first.t, dtype=np.uint64))


def _ladder_tile(frames: list[LogFrame], contrast_c: float, y0: int, y1: int):
    """Run the threshold ladder on rows [y0, y1).

    Returns event column chunks plus the tile's final reference state
    (log level and last-crossing timestamp per pixel).
    """
    ref = frames[0].log_l[y0:y1].astype(np.float64, copy=True)
    ref_t = np.full(ref.shape, frames[0].t, dtype=np.uint64)
    out_t, out_x, out_y, out_p = [], [], [], []
    for prev, now in zip(frames[:-1], frames[1:]):
        lp = prev.log_l[y0:y1]
        ln = now.log_l[y0:y1]
        delta = ln - ref
        k = np.floor(np.abs(delta) / contrast_c)
        fired = k >= 1.0
        if not fired.any():
            continue
        ks = k[fired].astype(np.int64)
        sign = np.where(delta[fired] > 0, 1.0, -1.0)
        ref_f = ref[fired]
        lp_f = lp[fired]
        dl = (ln - lp)[fired]
        ys, xs = np.nonzero(fired)

        # one row per emitted event: rung index j = 1..k within each pixel
        total = int(ks.sum())
        src = np.repeat(np.arange(ks.size), ks)
        offsets = np.cumsum(ks) - ks
        j = (np.arange(total, dtype=np.int64) - offsets[src] + 1).astype(np.float64)

        level = ref_f[src] + j * contrast_c * sign[src]
        denom = dl[src]
        alpha = np.where(denom != 0.0, (level - lp_f[src]) / denom, 1.0)
        alpha = np.clip(alpha, 0.0, 1.0)
        t_ev = np.rint(float(prev.t) + alpha * float(now.t - prev.t)).astype(np.uint64)

        out_t.append(t_ev)
        out_x.append(xs[src].astype(np.uint16))
        out_y.append((ys[src] + y0).astype(np.uint16))
        out_p.append(sign[src].astype(np.int8))
        ref[fired] = ref_f + ks.astype(np.float64) * contrast_c * sign
        # last rung of each pixel's burst carries the new reference time
        last = np.cumsum(ks) - 1
        ref_t[ys, xs] = t_ev[last]

    if not out_t:
        z = np.zeros(0)
        cols = z.astype(np.uint64), z.astype(np.uint16), z.astype(np.uint16), z.astype(np.int8)
    else:
        cols = (np.concatenate(out_t), np.concatenate(out_x),
                np.concatenate(out_y), np.concatenate(out_p))
    return cols + (ref, ref_t)


def generate_with_state(plan_frames: list[LogFrame], contrast_c: float, width: int,
                        height: int, threads: int = 1,
                        source_id: str = "") -> tuple[EventStream, PixelState]:
    """Like :func:`generate`, also returning the final per-pixel ladder state."""
    if contrast_c <= 0:
        raise ValueError("contrast_c must be positive")
    if len(plan_frames) < 2:
        raise ValueError("need at least 2 frames to generate events")
    for f in plan_frames:
        if f.log_l.shape != (height, width):
            raise ValueError(f"frame shape {f.log_l.shape} != ({height}, {width})")

    tiles = [(y0, min(y0 + _TILE_ROWS, height)) for y0 in range(0, height, _TILE_ROWS)]
    if threads > 1 and len(tiles) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda tile: _ladder_tile(plan_frames, contrast_c, *tile), tiles))
    else:
        parts = [_ladder_tile(plan_frames, contrast_c, *tile) for tile in tiles]

    t = np.concatenate([part[0] for part in parts])
    x = np.concatenate([part[1] for part in parts])
    y = np.concatenate([part[2] for part in parts])
    pol = np.concatenate([part[3] for part in parts])
    order = np.lexsort((pol, x, y, t))
    stream = EventStream(width, height, x[order], y[order], t[order], pol[order], source_id)
    state = PixelState(np.concatenate([part[4] for part in parts]),
                       np.concatenate([part[5] for part in parts]))
    return stream, state


def generate(plan_frames: list[LogFrame], contrast_c: float, width: int, height: int,
             threads: int = 1, source_id: str = "") -> EventStream:
    """Emit the event stream for a sampled log-frame sequence.

    Output is globally sorted by (t, y, x, p); identical for any thread
    count because rows are independent and the sort key is a total order.
    """
    stream, _ = generate_with_state(plan_frames, contrast_c, width, height, threads, source_id)
    return stream


@dataclass(frozen=True)
class RateWindow:
    """Event counts over one non-overlapping time window."""

    index: int
    t_start: int
    t_end: int
    total: int
    positive: int
    negative: int

    @property
    def positive_fraction(self) -> float:
        return self.positive / self.total if self.total else 0.0


def event_rate_stats(stream: EventStream, window_us: int) -> list[RateWindow]:
    """Bucket a stream into fixed windows starting at its first event."""
    if window_us <= 0:
        raise ValueError("window_us must be positive")
    if len(stream) == 0:
        return []
    start = int(stream.t.min())
    idx = ((stream.t - np.uint64(start)) // np.uint64(window_us)).astype(np.int64)
    n_windows = int(idx.max()) + 1
    total = np.bincount(idx, minlength=n_windows)
    positive = np.bincount(idx[stream.p > 0], minlength=n_windows)
    return [RateWindow(i, start + i * window_us, start + (i + 1) * window_us,
                       int(total[i]), int(positive[i]), int(total[i] - positive[i]))
            for i in range(n_windows)]
