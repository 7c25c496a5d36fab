"""Non-blind 3D U-Net magnitude denoiser and plugin-protocol server."""

from .model import UNet3D, load_weights, save_weights

__all__ = ["UNet3D", "load_weights", "save_weights"]
