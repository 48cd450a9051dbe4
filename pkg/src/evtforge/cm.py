"""Desk-scale contrast-maximization demonstrator.

Recovers rigid motion (and optionally a fronto-parallel plane depth) from
events alone: the window is split at its temporal midpoint into a
reference half and a moving half; the moving half's back-projected points
are warped by the candidate pose and all points are re-projected into one
accumulation image whose variance is maximized. The motion that aligns
the two halves stacks the event edges on top of each other, so the scale
ambiguity between translation magnitude and plane depth (only their
ratio is observable) shows up directly in the objective.

Synthetic scenes are planar segment sets rendered under a constant-
velocity camera; their ground-truth alignment translation (velocity times
half the window) is recorded alongside the generated stream.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CameraModel, DepthMap, EventStream, RigidPose
from .generator import generate
from .geometry import PointCloud3D, backproject, contrast_loss, project_to_iwe, warp_points
from .ingest import Frame, to_log
from .sampler import SamplerConfig, build_plan

POSE_PARAMS = ("tx", "ty", "tz", "rx", "ry", "rz")
DEPTH0_MIN = 1e-3
GRAD_STEP_DEFAULT = 1e-4

_INITIAL_STEP = {"tx": 0.02, "ty": 0.02, "tz": 0.02,
                 "rx": 0.01, "ry": 0.01, "rz": 0.01, "depth0": 0.05}
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class MotionHypothesis:
    """Enabled pose parameters (axis-angle rotation, meters translation)
    plus an optional fronto-parallel plane depth."""

    names: tuple[str, ...]
    values: np.ndarray
    depth0: float | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if not 1 <= len(self.names) <= 6:
            raise ValueError("between 1 and 6 pose parameters are supported")
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate parameter names")
        for name in self.names:
            if name not in POSE_PARAMS:
                raise ValueError(f"unknown parameter {name!r}, expected one of {POSE_PARAMS}")
        if values.shape != (len(self.names),):
            raise ValueError("values length must match names")
        if self.depth0 is not None and self.depth0 <= 0:
            raise ValueError("depth0 must be positive")

    def as_dict(self) -> dict[str, float]:
        d = {name: float(v) for name, v in zip(self.names, self.values)}
        if self.depth0 is not None:
            d["depth0"] = float(self.depth0)
        return d

    def pose(self) -> RigidPose:
        d = self.as_dict()
        tvec = np.array([d.get("tx", 0.0), d.get("ty", 0.0), d.get("tz", 0.0)])
        rvec = np.array([d.get("rx", 0.0), d.get("ry", 0.0), d.get("rz", 0.0)])
        return RigidPose.from_axis_angle(rvec, tvec)


@dataclass(frozen=True)
class SyntheticScene:
    """Planar 3D segment set viewed by a constant-velocity camera.

    Segments live in the reference (t=0) camera frame and must share one
    depth so the ground-truth depth map is an exact constant plane.
    """

    segments: np.ndarray
    camera: CameraModel
    width: int
    height: int
    velocity: np.ndarray
    duration_us: int
    base_fps: float = 60.0
    background: float = 0.15
    foreground: float = 0.85
    thickness_px: float = 1.5

    def __post_init__(self):
        segments = np.asarray(self.segments, dtype=np.float64)
        velocity = np.asarray(self.velocity, dtype=np.float64)
        object.__setattr__(self, "segments", segments)
        object.__setattr__(self, "velocity", velocity)
        if segments.ndim != 3 or segments.shape[1:] != (2, 3) or segments.shape[0] == 0:
            raise ValueError("degenerate geometry: need at least one (2, 3) segment")
        z = segments[..., 2]
        if not np.allclose(z, z.flat[0]):
            raise ValueError("all segment endpoints must share one depth (planar scene)")
        if self.duration_us <= 0:
            raise ValueError("trajectory duration must be positive")
        duration_s = self.duration_us / 1e6
        z_end = z - velocity[2] * duration_s
        if (z <= 0).any() or (z_end <= 0).any():
            raise ValueError("geometry must stay in front of the camera over the trajectory")

    @property
    def plane_depth(self) -> float:
        return float(self.segments[0, 0, 2])


def render_frame(scene: SyntheticScene, t_us: int) -> Frame:
    """Rasterize the scene at one instant: linear-falloff bright segments
    over a uniform background."""
    tau = t_us / 1e6
    pts = scene.segments - scene.velocity * tau
    z = pts[..., 2]
    u = scene.camera.fx * pts[..., 0] / z + scene.camera.cx
    v = scene.camera.fy * pts[..., 1] / z + scene.camera.cy

    gx, gy = np.meshgrid(np.arange(scene.width, dtype=np.float64),
                         np.arange(scene.height, dtype=np.float64))
    intensity = np.full((scene.height, scene.width), scene.background)
    for s in range(len(pts)):
        ax, ay, bx, by = u[s, 0], v[s, 0], u[s, 1], v[s, 1]
        vx, vy = bx - ax, by - ay
        length2 = vx * vx + vy * vy
        if length2 > 0:
            tpar = np.clip(((gx - ax) * vx + (gy - ay) * vy) / length2, 0.0, 1.0)
        else:
            tpar = 0.0
        dx = gx - (ax + tpar * vx)
        dy = gy - (ay + tpar * vy)
        profile = np.clip(1.0 - np.hypot(dx, dy) / scene.thickness_px, 0.0, 1.0)
        intensity = np.maximum(intensity,
                               scene.background + (scene.foreground - scene.background) * profile)
    return Frame(intensity, int(t_us))


@dataclass(frozen=True)
class SceneRender:
    """Generated stream plus ground-truth sidecars."""

    stream: EventStream
    depth: DepthMap
    pose_start: RigidPose
    pose_end: RigidPose
    alignment_translation: np.ndarray
    scene: SyntheticScene


def render_scene_events(scene: SyntheticScene, cfg: SamplerConfig,
                        threads: int = 1) -> SceneRender:
    """Rasterize at adaptive sample times and run the event generator.

    Sidecars: the true window-boundary poses, the exact constant-plane
    depth map at the reference time, and the alignment translation
    (camera velocity times half the window), which is the ground truth
    recovered by :func:`optimize_motion` on this stream.
    """
    n_base = max(2, int(round(scene.duration_us / 1e6 * scene.base_fps)) + 1)
    base_times = [int(round(i * scene.duration_us / (n_base - 1))) for i in range(n_base)]
    base_logs = [to_log(render_frame(scene, t)) for t in base_times]
    plan = build_plan(base_logs, cfg)
    plan_logs = [to_log(render_frame(scene, int(t))) for t in plan.times.tolist()]
    stream = generate(plan_logs, cfg.contrast_c, scene.width, scene.height,
                      threads=threads, source_id="synthetic")

    duration_s = scene.duration_us / 1e6
    depth = DepthMap.constant(scene.width, scene.height, scene.plane_depth)
    pose_end = RigidPose(np.eye(3), scene.velocity * duration_s)
    return SceneRender(stream, depth, RigidPose.identity(), pose_end,
                       scene.velocity * (duration_s / 2.0), scene)


def _split_stream(stream: EventStream, t_mid: int):
    mask = stream.t < np.uint64(t_mid)
    ref = EventStream(stream.width, stream.height, stream.x[mask], stream.y[mask],
                      stream.t[mask], stream.p[mask], stream.source_id)
    mov = EventStream(stream.width, stream.height, stream.x[~mask], stream.y[~mask],
                      stream.t[~mask], stream.p[~mask], stream.source_id)
    return ref, mov


def alignment_loss(stream: EventStream, cam: CameraModel, depth, pose: RigidPose) -> float:
    """Two-frame contrast objective for a candidate pose.

    depth is a DepthMap or a scalar plane depth. Events before the window
    midpoint form the reference cloud; later events are warped by `pose`
    before all points are re-projected and scored.
    """
    if len(stream) == 0:
        raise ValueError("no usable events")
    dm = depth if isinstance(depth, DepthMap) else DepthMap.constant(
        stream.width, stream.height, float(depth))
    t_mid = (int(stream.t.min()) + int(stream.t.max())) // 2
    ref, mov = _split_stream(stream, t_mid)
    cloud_ref, dropped_ref = backproject(ref, dm, cam)
    cloud_mov, dropped_mov = backproject(mov, dm, cam)
    if len(cloud_ref) + len(cloud_mov) == 0:
        raise ValueError("no usable events: all dropped during back-projection")
    merged = PointCloud3D.concatenate([cloud_ref, warp_points(cloud_mov, pose)])
    iwe, _ = project_to_iwe(merged, cam, stream.width, stream.height)
    return contrast_loss(iwe)


def central_difference_gradient(f, x: np.ndarray, h: float = GRAD_STEP_DEFAULT) -> np.ndarray:
    """The optimizer's internal finite-difference gradient."""
    g = np.zeros(len(x))
    for i in range(len(x)):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


@dataclass(frozen=True)
class TracePoint:
    evaluation: int
    params: dict[str, float]
    loss: float


class _BudgetExhausted(Exception):
    pass


def optimize_motion(stream: EventStream, cam: CameraModel, depth, init: MotionHypothesis,
                    budget: int, sweeps: int = 3, grad_h: float = GRAD_STEP_DEFAULT):
    """Coordinate descent with central-difference descent directions and an
    expanding/golden-section line search per coordinate.

    depth: a DepthMap fixes the geometry, only pose parameters move;
    None selects the fronto-parallel model, whose plane depth (init.depth0,
    required) joins the optimized coordinates.

    Returns (best hypothesis, trace). The trace records every improvement
    of the best loss, so it is monotone non-increasing by construction.
    budget caps the total number of objective evaluations.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if len(stream) == 0:
        raise ValueError("no usable events")
    if depth is None and init.depth0 is None:
        raise ValueError("fronto-parallel model requires init.depth0")

    coords = list(init.names) + (["depth0"] if depth is None else [])
    x0 = np.array(list(init.values) + ([init.depth0] if depth is None else []),
                  dtype=np.float64)

    def build(x: np.ndarray) -> MotionHypothesis:
        n = len(init.names)
        d0 = float(max(x[n], DEPTH0_MIN)) if depth is None else init.depth0
        return MotionHypothesis(init.names, x[:n].copy(), d0)

    state = {"evals": 0, "best_x": x0.copy(), "best_f": np.inf}
    trace: list[TracePoint] = []

    def f(x: np.ndarray) -> float:
        if state["evals"] >= budget:
            raise _BudgetExhausted
        hyp = build(x)
        loss = alignment_loss(stream, cam,
                              depth if depth is not None else hyp.depth0, hyp.pose())
        state["evals"] += 1
        if loss < state["best_f"]:
            state["best_f"] = loss
            state["best_x"] = x.copy()
            trace.append(TracePoint(state["evals"], build(x).as_dict(), loss))
        return loss

    def probe(base: np.ndarray, ci: int, value: float) -> float:
        x = base.copy()
        x[ci] = value
        if coords[ci] == "depth0":
            x[ci] = max(x[ci], DEPTH0_MIN)
        return f(x)

    def expand(base, ci, d, step, f_base):
        """Double the step along direction d while the loss keeps improving.
        Returns (best loss, best step, first failing step)."""
        best_t, best_ft = 0.0, f_base
        t_cur = step
        while True:
            ft = probe(base, ci, base[ci] + d * t_cur)
            if ft < best_ft:
                best_t, best_ft = t_cur, ft
                t_cur *= 2.0
            else:
                return best_ft, best_t, t_cur

    try:
        f(x0)
        for _ in range(sweeps):
            improved = False
            for ci, name in enumerate(coords):
                base = state["best_x"].copy()
                f_base = state["best_f"]
                g = (probe(base, ci, base[ci] + grad_h) - probe(base, ci, base[ci] - grad_h)) / (2.0 * grad_h)
                first = -1.0 if g > 0 else 1.0
                step = _INITIAL_STEP.get(name, 0.02)

                # probe both directions, descent side first; the surface can
                # dip locally on the wrong side, so the better branch wins
                branches = []
                for d in (first, -first):
                    best_ft, best_t, t_fail = expand(base, ci, d, step, f_base)
                    if best_t > 0.0:
                        branches.append((best_ft, d, best_t, t_fail))
                if not branches:
                    continue
                improved = True
                _, d, best_t, t_fail = min(branches, key=lambda b: b[0])

                # golden-section refine inside the bracket around the best step
                lo = best_t / 2.0 if best_t > step else 0.0
                hi = t_fail
                a = hi - _GOLDEN * (hi - lo)
                b = lo + _GOLDEN * (hi - lo)
                fa = probe(base, ci, base[ci] + d * a)
                fb = probe(base, ci, base[ci] + d * b)
                while hi - lo > 1e-4:
                    if fa < fb:
                        hi, b, fb = b, a, fa
                        a = hi - _GOLDEN * (hi - lo)
                        fa = probe(base, ci, base[ci] + d * a)
                    else:
                        lo, a, fa = a, b, fb
                        b = lo + _GOLDEN * (hi - lo)
                        fb = probe(base, ci, base[ci] + d * b)
            if not improved:
                break
    except _BudgetExhausted:
        pass

    return build(state["best_x"]), trace
