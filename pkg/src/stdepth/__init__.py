"""Stereo-temporal direct recovery of metric depth, egomotion and camera intrinsics."""

from .geometry import Intrinsics, PoseSE3
from .losses import LossBreakdown, LossWeights
from .optim import OptimConfig, OptimReport
from .synth import Quadruplet, SceneSpec, make_quadruplet, preset

__version__ = "0.1.0"

__all__ = [
    "Intrinsics",
    "PoseSE3",
    "LossBreakdown",
    "LossWeights",
    "OptimConfig",
    "OptimReport",
    "Quadruplet",
    "SceneSpec",
    "make_quadruplet",
    "preset",
]
