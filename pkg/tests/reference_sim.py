"""Independent scalar oracles used to pin expected values.

Everything here walks pixels one at a time in plain Python, deliberately
avoiding the vectorized library paths it is used to check.
"""
from __future__ import annotations

import math


def simulate_events(plan_frames, contrast_c):
    """Scalar threshold-ladder simulator.

    Walks every pixel through every consecutive frame pair, emitting one
    event per crossed contrast rung with a linearly interpolated
    timestamp, and advancing the per-pixel reference by the crossed rungs
    only (sub-threshold residual preserved).

    Returns a list of (t, x, y, p) tuples sorted by (t, y, x, p).
    """
    height, width = plan_frames[0].log_l.shape
    ref = [[float(plan_frames[0].log_l[y, x]) for x in range(width)] for y in range(height)]
    events = []
    for prev, now in zip(plan_frames[:-1], plan_frames[1:]):
        tp, tn = prev.t, now.t
        for y in range(height):
            for x in range(width):
                lp = float(prev.log_l[y, x])
                ln = float(now.log_l[y, x])
                delta = ln - ref[y][x]
                k = math.floor(abs(delta) / contrast_c)
                if k == 0:
                    continue
                s = 1.0 if delta > 0 else -1.0
                denom = ln - lp
                for j in range(1, k + 1):
                    level = ref[y][x] + j * contrast_c * s
                    alpha = (level - lp) / denom if denom != 0.0 else 1.0
                    alpha = min(max(alpha, 0.0), 1.0)
                    t_ev = round(tp + alpha * (tn - tp))
                    events.append((t_ev, x, y, int(s)))
                ref[y][x] = ref[y][x] + k * contrast_c * s
    events.sort(key=lambda e: (e[0], e[2], e[1], e[3]))
    return events


def final_reference_levels(plan_frames, contrast_c):
    """Per-pixel reference ladder level after the full sequence."""
    height, width = plan_frames[0].log_l.shape
    ref = [[float(plan_frames[0].log_l[y, x]) for x in range(width)] for y in range(height)]
    for prev, now in zip(plan_frames[:-1], plan_frames[1:]):
        for y in range(height):
            for x in range(width):
                delta = float(now.log_l[y, x]) - ref[y][x]
                k = math.floor(abs(delta) / contrast_c)
                if k:
                    s = 1.0 if delta > 0 else -1.0
                    ref[y][x] = ref[y][x] + k * contrast_c * s
    return ref


def scan_plan(frame_times, frame_rates, contrast_c, dt_min_us, dt_max_us):
    """Brute-force step-by-step sample plan, mirroring the adaptive rule
    with explicit scalar bookkeeping."""
    times = [frame_times[0]]
    t = frame_times[0]
    t_last = frame_times[-1]
    while t < t_last:
        i = 0
        while i + 1 < len(frame_times) - 1 and frame_times[i + 1] <= t:
            i += 1
        dt = contrast_c / frame_rates[i] * 1e6
        dt = min(max(dt, float(dt_min_us)), float(dt_max_us))
        t = min(t + max(1, round(dt)), t_last)
        times.append(t)
    return times


def sobel_sum(residual, valid):
    """Direct 3x3 Sobel convolution; skips any window touching an invalid
    pixel or the border. Returns sum of |gx| + |gy|."""
    kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]
    ky = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]]
    h = len(residual)
    w = len(residual[0])
    total = 0.0
    for y in range(1, h - 1):
        for x in range(1, w - 1):
            ok = True
            gx = 0.0
            gy = 0.0
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    if not valid[y + dy][x + dx]:
                        ok = False
                    gx += kx[dy + 1][dx + 1] * residual[y + dy][x + dx]
                    gy += ky[dy + 1][dx + 1] * residual[y + dy][x + dx]
            if ok:
                total += abs(gx) + abs(gy)
    return total
