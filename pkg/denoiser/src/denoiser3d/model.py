"""3-level 3D U-Net for non-blind magnitude denoising.

Input is a 2-channel volume (noisy magnitudes + constant noise-level map),
output a 1-channel denoised magnitude volume of identical spatial size.
Encoder widths double per level from 32; every block is Conv3d -> BatchNorm
-> ReLU. Pooling uses ceil mode and decoder outputs are cropped to their
skip connections, so odd sizes like 25x25x49 survive three levels.
"""

from __future__ import annotations

import torch
import torch.nn as nn

BASE_WIDTH = 32


def _block(c_in, c_out):
    return nn.Sequential(
        nn.Conv3d(c_in, c_out, kernel_size=3, padding=1),
        nn.BatchNorm3d(c_out),
        nn.ReLU(inplace=True),
        nn.Conv3d(c_out, c_out, kernel_size=3, padding=1),
        nn.BatchNorm3d(c_out),
        nn.ReLU(inplace=True),
    )


def _crop_to(x, ref):
    return x[..., : ref.shape[-3], : ref.shape[-2], : ref.shape[-1]]


class UNet3D(nn.Module):
    def __init__(self, base_width: int = BASE_WIDTH):
        super().__init__()
        w = base_width
        self.enc1 = _block(2, w)
        self.enc2 = _block(w, 2 * w)
        self.bottleneck = _block(2 * w, 4 * w)
        self.pool = nn.MaxPool3d(2, ceil_mode=True)
        self.up2 = nn.ConvTranspose3d(4 * w, 2 * w, kernel_size=2, stride=2)
        self.dec2 = _block(4 * w, 2 * w)
        self.up1 = nn.ConvTranspose3d(2 * w, w, kernel_size=2, stride=2)
        self.dec1 = _block(2 * w, w)
        self.head = nn.Conv3d(w, 1, kernel_size=3, padding=1)

    def forward(self, x):
        e1 = self.enc1(x)
        e2 = self.enc2(self.pool(e1))
        b = self.bottleneck(self.pool(e2))
        d2 = self.dec2(torch.cat([_crop_to(self.up2(b), e2), e2], dim=1))
        d1 = self.dec1(torch.cat([_crop_to(self.up1(d2), e1), e1], dim=1))
        return self.head(d1)

    def denoise(self, noisy: torch.Tensor, noise_level: float) -> torch.Tensor:
        """One (D, H, W) volume in, denoised volume out; clamps at zero."""
        self.eval()
        with torch.no_grad():
            level = torch.full_like(noisy, float(noise_level))
            x = torch.stack([noisy, level]).unsqueeze(0)
            out = self.forward(x)[0, 0]
        return out.clamp_min(0.0)


def save_weights(path, model: UNet3D, meta: dict | None = None) -> None:
    torch.save({"state_dict": model.state_dict(),
                "base_width": model.enc1[0].out_channels,
                "meta": meta or {}}, path)


def load_weights(path) -> UNet3D:
    blob = torch.load(path, map_location="cpu")
    model = UNet3D(base_width=blob["base_width"])
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model
