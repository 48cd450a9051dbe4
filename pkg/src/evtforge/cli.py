"""Command-line pipeline: frames -> events -> volumes -> warps -> reports.

Every subcommand is a pure function of its input files and flags; outputs
are written to a temp file and atomically renamed, so an interrupted run
never leaves a partial dataset file. Exit codes: 0 ok, 1 domain error,
2 usage or I/O error.
"""
from __future__ import annotations

import dataclasses
import functools
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from . import cm, evtio, generator, geometry, losses, volume
from .core import CameraModel, DepthMap
from .ingest import load_sequence, to_log
from .sampler import SamplerConfig, build_plan, sample_log_frames

_CONFIG_DEFAULTS_HELP = {
    "contrast_c": 0.15,
    "dt_min_us": 100,
    "bins": 5,
    "window_us": 166666,
    "lambda_weight": 0.6,
    "scales": 4,
}


@dataclass(frozen=True)
class PipelineConfig:
    """All pipeline knobs with their defaults.

    threads = 0 selects hardware parallelism; dt_max_us = None derives the
    bound from the source frame spacing; sampler_c = None shares
    contrast_c between the sampler and the generator.
    """

    contrast_c: float = 0.15
    sampler_c: float | None = None
    dt_min_us: int = 100
    dt_max_us: int | None = None
    bins: int = 5
    window_us: int = 166666
    lambda_weight: float = 0.6
    scales: int = 4
    threads: int = 0
    seed: int = 0

    def to_text(self) -> str:
        lines = []
        for field in sorted(f.name for f in dataclasses.fields(self)):
            value = getattr(self, field)
            lines.append(f"{field} = {'auto' if value is None else value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PipelineConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in fields:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            if val == "auto":
                values[key] = None
            elif "int" in str(fields[key].type):
                values[key] = int(val)
            else:
                values[key] = float(val)
        return cls(**values)


def _merged_config(config_path, **overrides) -> PipelineConfig:
    if config_path:
        cfg = PipelineConfig.from_text(Path(config_path).read_text())
    else:
        cfg = PipelineConfig()
    changed = {k: v for k, v in overrides.items() if v is not None}
    return dataclasses.replace(cfg, **changed)


def _resolve_threads(threads: int) -> int:
    return threads if threads > 0 else (os.cpu_count() or 1)


def _sampler_config(cfg: PipelineConfig) -> SamplerConfig:
    return SamplerConfig(contrast_c=cfg.sampler_c if cfg.sampler_c is not None else cfg.contrast_c,
                         dt_min_us=cfg.dt_min_us, dt_max_us=cfg.dt_max_us)


def _atomic_write(path, write_fn):
    """Run write_fn against a temp path, then rename over the target."""
    path = Path(path)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    try:
        result = write_fn(tmp)
        os.replace(tmp, path)
        return result
    finally:
        tmp.unlink(missing_ok=True)


def _cli_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except OSError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except ValueError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
    return wrapper


_config_option = click.option("--config", type=click.Path(exists=False), default=None,
                              help="key = value config file; flags override it.")
_threads_option = click.option("--threads", type=int, default=None, envvar="EVTFORGE_THREADS",
                               help="Worker threads [default: 0 = hardware parallelism].")


@click.group()
def main():
    """Event-camera stream synthesis and geometric self-supervision toolkit."""


@main.command("generate")
@click.argument("frames_dir", type=click.Path())
@click.argument("out_file", type=click.Path())
@click.option("--fps", type=float, default=30.0, show_default=True,
              help="Frame rate used when no timestamp sidecar exists.")
@click.option("--contrast-c", type=float, default=None,
              help="Contrast threshold in log units [default: 0.15].")
@click.option("--sampler-c", type=float, default=None,
              help="Separate sampling constant [default: shared with --contrast-c].")
@click.option("--dt-min-us", type=int, default=None,
              help="Minimum sampling step [default: 100].")
@click.option("--dt-max-us", type=int, default=None,
              help="Maximum sampling step [default: 2 source-frame intervals].")
@_threads_option
@_config_option
@_cli_errors
def cmd_generate(frames_dir, out_file, fps, contrast_c, sampler_c, dt_min_us, dt_max_us,
                 threads, config):
    """Convert a frame directory into a binary event stream."""
    cfg = _merged_config(config, contrast_c=contrast_c, sampler_c=sampler_c,
                         dt_min_us=dt_min_us, dt_max_us=dt_max_us, threads=threads)
    frames = load_sequence(frames_dir, fps)
    logs = [to_log(f) for f in frames]
    plan = build_plan(logs, _sampler_config(cfg))
    plan_logs = sample_log_frames(logs, plan)
    stream = generator.generate(plan_logs, cfg.contrast_c, frames[0].width, frames[0].height,
                                threads=_resolve_threads(cfg.threads),
                                source_id=Path(frames_dir).name)
    _atomic_write(out_file, lambda p: evtio.write_stream(stream, p))
    duration_us = frames[-1].t - frames[0].t
    rate = len(stream) / (duration_us / 1e6) if duration_us else 0.0
    click.echo(f"events = {len(stream)}")
    click.echo(f"duration_us = {duration_us}")
    click.echo(f"events_per_second = {rate:.6g}")


@main.command("volumize")
@click.argument("stream_file", type=click.Path())
@click.argument("out_file", type=click.Path())
@click.option("--bins", type=int, default=None, help="Temporal bins [default: 5].")
@click.option("--window-us", type=int, default=None,
              help="Window length when --t-end is unset [default: 166666].")
@click.option("--t-start", type=int, default=None,
              help="Window start [default: first event timestamp].")
@click.option("--t-end", type=int, default=None,
              help="Window end (inclusive) [default: t-start + window].")
@click.option("--shards", type=int, default=1, show_default=True,
              help="Accumulation shard count; pinned for reproducibility.")
@_config_option
@_cli_errors
def cmd_volumize(stream_file, out_file, bins, window_us, t_start, t_end, shards, config):
    """Quantize an event stream window into a B-bin volume file."""
    cfg = _merged_config(config, bins=bins, window_us=window_us)
    stream = evtio.read_stream(stream_file)
    if t_start is None:
        t_start = int(stream.t.min()) if len(stream) else 0
    if t_end is None:
        t_end = t_start + cfg.window_us
    vol = volume.build_volume(stream, t_start, t_end, cfg.bins, shards)
    _atomic_write(out_file, lambda p: volume.write_volume(vol, p))
    click.echo(f"bins = {vol.bins}")
    click.echo(f"height = {vol.height}")
    click.echo(f"width = {vol.width}")
    click.echo(f"signed_mass = {vol.data.sum():.6g}")


def _camera_options(fn):
    for opt in (click.option("--fx", type=float, required=True, help="Focal length x (pixels)."),
                click.option("--fy", type=float, required=True, help="Focal length y (pixels)."),
                click.option("--cx", type=float, required=True, help="Principal point x (pixels)."),
                click.option("--cy", type=float, required=True, help="Principal point y (pixels).")):
        fn = opt(fn)
    return fn


@main.command("warp")
@click.argument("stream_file", type=click.Path())
@click.argument("depth_file", type=click.Path())
@click.argument("out_file", type=click.Path())
@_camera_options
@click.option("--tx", type=float, default=0.0, show_default=True, help="Translation x (m).")
@click.option("--ty", type=float, default=0.0, show_default=True, help="Translation y (m).")
@click.option("--tz", type=float, default=0.0, show_default=True, help="Translation z (m).")
@click.option("--rx", type=float, default=0.0, show_default=True, help="Rotation x (rad, axis-angle).")
@click.option("--ry", type=float, default=0.0, show_default=True, help="Rotation y (rad, axis-angle).")
@click.option("--rz", type=float, default=0.0, show_default=True, help="Rotation z (rad, axis-angle).")
@click.option("--t-start", type=int, default=None, help="Optional window start [default: full stream].")
@click.option("--t-end", type=int, default=None, help="Optional window end [default: full stream].")
@click.option("--pgm", type=click.Path(), default=None,
              help="Also render the warped-event image to this PGM file.")
@_cli_errors
def cmd_warp(stream_file, depth_file, out_file, fx, fy, cx, cy, tx, ty, tz, rx, ry, rz,
             t_start, t_end, pgm):
    """Back-project, rigidly warp, and re-accumulate an event stream."""
    window = (t_start, t_end) if t_start is not None and t_end is not None else None
    stream = evtio.read_stream(stream_file, window)
    depth = losses.read_depth(depth_file)
    cam = CameraModel(fx, fy, cx, cy)
    pose = cm.MotionHypothesis(("tx", "ty", "tz", "rx", "ry", "rz"),
                               np.array([tx, ty, tz, rx, ry, rz])).pose()
    cloud, dropped_depth = geometry.backproject(stream, depth, cam)
    warped = geometry.warp_points(cloud, pose)
    iwe, dropped_proj = geometry.project_to_iwe(warped, cam, stream.width, stream.height)
    span = (int(stream.t.min()), int(stream.t.max())) if len(stream) else (0, 1)
    _atomic_write(out_file, lambda p: geometry.write_iwe(iwe, p, span[0], max(span[1], span[0] + 1)))
    if pgm:
        _atomic_write(pgm, lambda p: geometry.render_pgm(iwe, p))
    click.echo(f"events = {len(stream)}")
    click.echo(f"dropped_invalid_depth = {dropped_depth}")
    click.echo(f"dropped_projection = {dropped_proj}")
    click.echo(f"contrast_loss = {geometry.contrast_loss(iwe):.17g}")


@main.command("optimize")
@click.argument("stream_file", type=click.Path())
@click.argument("trace_file", type=click.Path())
@_camera_options
@click.option("--params", default="tx", show_default=True,
              help="Comma-separated pose parameters to optimize.")
@click.option("--init", "init_values", default=None,
              help="Comma-separated initial values [default: zeros].")
@click.option("--depth0", type=float, default=None,
              help="Fronto-parallel plane depth (m); optimized jointly unless --depth-file is given.")
@click.option("--depth-file", type=click.Path(), default=None,
              help="Fixed depth map file; disables the plane-depth coordinate.")
@click.option("--budget", type=int, default=300, show_default=True,
              help="Maximum objective evaluations.")
@click.option("--sweeps", type=int, default=3, show_default=True,
              help="Coordinate-descent sweeps.")
@click.option("--t-start", type=int, default=None, help="Optional window start [default: full stream].")
@click.option("--t-end", type=int, default=None, help="Optional window end [default: full stream].")
@_config_option
@_cli_errors
def cmd_optimize(stream_file, trace_file, fx, fy, cx, cy, params, init_values, depth0,
                 depth_file, budget, sweeps, t_start, t_end, config):
    """Recover motion (and optionally plane depth) by contrast maximization."""
    window = (t_start, t_end) if t_start is not None and t_end is not None else None
    stream = evtio.read_stream(stream_file, window)
    cam = CameraModel(fx, fy, cx, cy)
    names = tuple(p.strip() for p in params.split(",") if p.strip())
    values = (np.array([float(v) for v in init_values.split(",")])
              if init_values else np.zeros(len(names)))
    if depth_file is not None:
        depth = losses.read_depth(depth_file)
        init = cm.MotionHypothesis(names, values)
    elif depth0 is not None:
        depth = None
        init = cm.MotionHypothesis(names, values, depth0)
    else:
        raise ValueError("provide --depth-file or --depth0")
    best, trace = cm.optimize_motion(stream, cam, depth, init, budget, sweeps)

    columns = list(names) + (["depth0"] if depth is None else [])

    def write_trace(path):
        with open(path, "w") as f:
            f.write("iteration," + ",".join(columns) + ",loss\n")
            for point in trace:
                vals = ",".join(f"{point.params[c]:.17g}" for c in columns)
                f.write(f"{point.evaluation},{vals},{point.loss:.17g}\n")

    _atomic_write(trace_file, write_trace)
    for name, value in best.as_dict().items():
        click.echo(f"{name} = {value:.17g}")
    click.echo(f"loss = {trace[-1].loss:.17g}")
    click.echo(f"evaluations = {trace[-1].evaluation}")


@main.command("stats")
@click.argument("stream_files", type=click.Path(), nargs=-1, required=True)
@click.option("--window-us", type=int, default=None,
              help="Rate-histogram window [default: 166666].")
@click.option("--categories", default=None,
              help="Comma-separated per-file categories; switches to manifest output.")
@_config_option
@_cli_errors
def cmd_stats(stream_files, window_us, categories, config):
    """Per-window event-rate stats, or a dataset manifest with --categories."""
    cfg = _merged_config(config, window_us=window_us)
    if categories is not None:
        cats = [c.strip() for c in categories.split(",")]
        manifest = evtio.build_manifest(list(stream_files), cats)
        click.echo(manifest.to_text(), nl=False)
        return
    for path in stream_files:
        header = evtio.read_header(path)
        stream = evtio.read_stream(path)
        for row in generator.event_rate_stats(stream, cfg.window_us):
            click.echo(f"window={row.index} t_start={row.t_start} t_end={row.t_end} "
                       f"total={row.total} positive={row.positive} negative={row.negative}")
        click.echo(f"total_events = {len(stream)}")
        click.echo(f"header_count = {header.event_count}")


@main.command("losses")
@click.argument("pred_file", type=click.Path())
@click.argument("gt_file", type=click.Path())
@click.option("--lambda", "lambda_weight", type=float, default=None,
              help="Composite weight [default: 0.6].")
@click.option("--scales", type=int, default=None,
              help="Gradient-loss scales [default: 4].")
@click.option("--contrast", type=float, default=0.0, show_default=True,
              help="Contrast loss passed through into the student composite.")
@click.option("--log-residual", is_flag=True, default=False, show_default=True,
              help="Use |log(pred) - log(gt)| residuals instead of linear depth.")
@_config_option
@_cli_errors
def cmd_losses(pred_file, gt_file, lambda_weight, scales, contrast, log_residual, config):
    """Evaluate the depth loss family on two depth-map files."""
    cfg = _merged_config(config, lambda_weight=lambda_weight, scales=scales)
    pred = losses.read_depth(pred_file)
    gt = losses.read_depth(gt_file)
    teacher = losses.teacher_loss(pred, gt, cfg.lambda_weight, cfg.scales, log_residual)
    student = losses.student_loss(contrast, pred, gt, cfg.lambda_weight)
    report = losses.LossReport(si=teacher.si, grad=teacher.grad, teacher=teacher.teacher,
                               contrast=contrast, l1_distill=student.l1_distill,
                               student=student.student, lambda_weight=cfg.lambda_weight)
    click.echo(report.to_text(), nl=False)


@main.command("synth")
@click.argument("out_file", type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True, help="Scene randomization seed.")
@click.option("--tx", type=float, default=0.1, show_default=True,
              help="Ground-truth alignment translation x (m).")
@click.option("--depth", type=float, default=2.0, show_default=True, help="Plane depth (m).")
@click.option("--duration-us", type=int, default=100_000, show_default=True, help="Window length.")
@click.option("--size", type=int, default=64, show_default=True, help="Sensor width and height.")
@click.option("--depth-out", type=click.Path(), default=None,
              help="Also write the ground-truth depth map here.")
@_threads_option
@_cli_errors
def cmd_synth(out_file, seed, tx, depth, duration_us, size, depth_out, threads):
    """Generate a synthetic translating-scene event stream fixture."""
    scene = cm.SyntheticScene(
        segments=_random_segments(np.random.default_rng(seed), size, depth),
        camera=CameraModel(100.0, 100.0, size / 2 - 0.5, size / 2 - 0.5),
        width=size, height=size,
        velocity=np.array([tx / (duration_us / 1e6) * 2.0, 0.0, 0.0]),
        duration_us=duration_us)
    render = cm.render_scene_events(scene, SamplerConfig(),
                                    threads=_resolve_threads(threads or 0))
    _atomic_write(out_file, lambda p: evtio.write_stream(render.stream, p))
    if depth_out:
        _atomic_write(depth_out, lambda p: losses.write_depth(render.depth, p))
    click.echo(f"events = {len(render.stream)}")
    click.echo(f"alignment_tx = {render.alignment_translation[0]:.17g}")
    click.echo(f"plane_depth = {scene.plane_depth:.17g}")


def _random_segments(rng, size: int, depth: float) -> np.ndarray:
    """A few random segments in the z = depth plane, kept inside the view."""
    half_extent = depth * (size * 0.30) / 100.0
    n = int(rng.integers(2, 5))
    centers = rng.uniform(-half_extent * 0.6, half_extent * 0.6, size=(n, 2))
    angles = rng.uniform(0.0, np.pi, size=n)
    lengths = rng.uniform(half_extent * 0.5, half_extent * 1.2, size=n)
    segs = np.zeros((n, 2, 3))
    for i in range(n):
        d = np.array([np.cos(angles[i]), np.sin(angles[i])]) * lengths[i] / 2
        segs[i, 0, :2] = centers[i] - d
        segs[i, 1, :2] = centers[i] + d
        segs[i, :, 2] = depth
    return segs


if __name__ == "__main__":
    main()
