"""Metrics, synthetic verification scenes, and dataset loaders."""

from .metrics import MetricsReport, ate_rmse, psnr, ssim
from .scene import SceneSpec, SyntheticScene, generate_scene
from .datasets import load_dataset

__all__ = [
    "MetricsReport",
    "ate_rmse",
    "psnr",
    "ssim",
    "SceneSpec",
    "SyntheticScene",
    "generate_scene",
    "load_dataset",
]
