"""Event-camera stream synthesis and geometric self-supervision toolkit."""

from .core import (
    CameraModel,
    DepthMap,
    Event,
    EventStream,
    RigidPose,
    validate_stream,
)
from .ingest import Frame, LogFrame, from_log, load_sequence, to_log
from .sampler import SamplePlan, SamplerConfig, brightness_rate, build_plan, next_sample_time, sample_log_frames
from .generator import PixelState, RateWindow, event_rate_stats, generate, generate_with_state
from .volume import EventVolume, build_volume, default_window_us, read_volume, write_volume
from .geometry import (
    PointCloud3D,
    WarpedEventImage,
    accumulate_events,
    backproject,
    contrast_loss,
    project_to_iwe,
    warp_points,
)
from .losses import LossReport, grad_loss, read_depth, si_loss, student_loss, teacher_loss, write_depth
from .cm import MotionHypothesis, SyntheticScene, alignment_loss, optimize_motion, render_scene_events
from .evtio import Manifest, build_manifest, read_header, read_stream, write_stream

__version__ = "0.1.0"
