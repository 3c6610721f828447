"""Fixed pixel/latent maps standing in for a learned VAE.

Encode: 4x average pooling of RGB plus a luminance channel, then a fixed
affine (v - 0.5) * 4 so latents are roughly zero-mean and unit-scale for the
diffusion process -> (4, H/4, W/4). Decode inverts the affine on the RGB
channels, upsamples nearest-neighbor, and clamps to [0, 1]. Images piecewise
constant on 4x4 pixel blocks round-trip to float precision.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

LATENT_FACTOR = 4
LATENT_CHANNELS = 4
LATENT_SHIFT = 0.5
LATENT_SCALE = 4.0


class LatentCodec:
    """Deterministic, parameter-free encoder/decoder pair."""

    factor = LATENT_FACTOR
    channels = LATENT_CHANNELS

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        single = images.dim() == 3
        x = images.unsqueeze(0) if single else images
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) images, got {tuple(images.shape)}")
        if x.shape[-1] % self.factor or x.shape[-2] % self.factor:
            raise ValueError(
                f"image size {tuple(x.shape[-2:])} not divisible by latent factor {self.factor}"
            )
        rgb = F.avg_pool2d(x, self.factor)
        lum = rgb.mean(dim=1, keepdim=True)
        z = (torch.cat([rgb, lum], dim=1) - LATENT_SHIFT) * LATENT_SCALE
        return z.squeeze(0) if single else z

    def decode(self, latents: torch.Tensor) -> torch.Tensor:
        single = latents.dim() == 3
        z = latents.unsqueeze(0) if single else latents
        if z.dim() != 4 or z.shape[1] != self.channels:
            raise ValueError(f"expected (B, {self.channels}, h, w) latents, got {tuple(latents.shape)}")
        rgb = z[:, :3] / LATENT_SCALE + LATENT_SHIFT
        x = F.interpolate(rgb, scale_factor=self.factor, mode="nearest")
        x = x.clamp(0.0, 1.0)
        return x.squeeze(0) if single else x
