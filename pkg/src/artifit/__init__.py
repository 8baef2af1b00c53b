"""Fit a hinged two-box model (static base plus one revolute part) to mask videos."""
from .fitter import FitConfig, FitResult, cube_rand, fit_video
from .geometry import ArticulatedModel, Cuboid, HingeSpec, MotionParams, PoseParams
from .metrics import Thresholds, aggregate, frame_eval, video_eval
from .objective import HumanObservation, LossConfig, Objective, loss_total
from .render import CameraIntrinsics, RenderConfig, SoftMask
from .synth import SceneSpec, VideoSample, gen_scene, gen_suite, read_dataset, write_dataset

__version__ = "0.1.0"

__all__ = [
    "ArticulatedModel", "CameraIntrinsics", "Cuboid", "FitConfig", "FitResult", "HingeSpec",
    "HumanObservation", "LossConfig", "MotionParams", "Objective", "PoseParams", "RenderConfig",
    "SceneSpec", "SoftMask", "Thresholds", "VideoSample", "aggregate", "cube_rand", "fit_video",
    "frame_eval", "gen_scene", "gen_suite", "loss_total", "read_dataset", "video_eval", "write_dataset",
]
