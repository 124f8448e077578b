"""vidfield: fit videos with latent-grid neural fields, then compress them.

A video is represented by three multi-resolution 2D latent keyframe grids
(one per spatio-temporal axis pair), a small 3D latent grid for local
detail, and a modulated sinusoidal MLP mapping the gathered latents to RGB.
Training uses hand-derived gradients over a minimal numpy kernel; trained
latent grids compress through a re-training-free 8-bit quantize-and-codec
pipeline. Decoding supports reconstruction, temporal interpolation, spatial
super-resolution, and inpainting.
"""

from .model import ModelConfig, NvpModel, build_model, render_video
from .trainer import TrainConfig, TrainReport, evaluate, init_model, train
from .video import VideoTensor, load_video, save_frames

__version__ = "0.1.0"

__all__ = [
    "ModelConfig",
    "NvpModel",
    "TrainConfig",
    "TrainReport",
    "VideoTensor",
    "build_model",
    "evaluate",
    "init_model",
    "load_video",
    "render_video",
    "save_frames",
    "train",
    "__version__",
]
