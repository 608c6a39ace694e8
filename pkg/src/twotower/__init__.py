"""Two-tower UNet stereo depth estimation on a small numpy autodiff engine."""

from .autograd import GradGraph, ShapeError, Tensor, backward, no_grad
from .data import SceneSpec, StereoSample, generate_scene
from .estimator import TwoTowerDepthEstimator
from .metrics import DepthMetrics, compute_metrics
from .model import ModelConfig, ModelParams, build, forward, param_count
from .train import TrainConfig, train

__all__ = [
    "DepthMetrics",
    "GradGraph",
    "ModelConfig",
    "ModelParams",
    "SceneSpec",
    "ShapeError",
    "StereoSample",
    "Tensor",
    "TrainConfig",
    "TwoTowerDepthEstimator",
    "backward",
    "build",
    "compute_metrics",
    "forward",
    "generate_scene",
    "no_grad",
    "param_count",
    "train",
]
