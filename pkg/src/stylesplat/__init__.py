"""Two-phase stylized Gaussian splatting on CPU.

Phase 1 fits an anisotropic Gaussian cloud to posed images through a
differentiable tile rasterizer.  Phase 2 freezes the geometry and optimizes
only the spherical-harmonic colors under style, adversarial, content and
depth losses computed by small from-scratch conv nets.
"""
__version__ = "0.1.0"

from .config import TrainConfig, config_from_dict, load_config
from .dataio import (SceneError, load_checkpoint, load_depth, load_image, load_scene,
                     save_checkpoint, save_depth, save_image)
from .losses import LossWeights, Nets, loss_efficient
from .metrics import MetricReport, feature_distance, psnr, ssim
from .pipelines import (NumericalError, TransferRun, ablation_matrix, prepare_nets,
                        reconstruct, transfer)
from .rasterizer import render, render_backward, render_depth
from .scene import Camera, GaussianCloud
from .synthetic import SyntheticSceneSpec, generate_synthetic, recolor_pool

__all__ = [
    "Camera", "GaussianCloud", "LossWeights", "MetricReport", "Nets", "NumericalError",
    "SceneError", "SyntheticSceneSpec", "TrainConfig", "TransferRun", "ablation_matrix",
    "config_from_dict", "feature_distance", "generate_synthetic", "load_checkpoint",
    "load_config", "load_depth", "load_image", "load_scene", "loss_efficient", "prepare_nets",
    "psnr", "recolor_pool", "reconstruct", "render", "render_backward", "render_depth",
    "save_checkpoint", "save_depth", "save_image", "ssim", "transfer",
]
