"""PNG image I/O as float tensors, channel-first, values in [0, 1]."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image


def load_image(path: str | Path) -> torch.Tensor:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def save_image(tensor: torch.Tensor, path: str | Path) -> None:
    if tensor.dim() != 3 or tensor.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) image tensor, got {tuple(tensor.shape)}")
    arr = (tensor.detach().clamp(0.0, 1.0) * 255.0).round().byte()
    arr = arr.permute(1, 2, 0).numpy()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def quantize(tensor: torch.Tensor) -> torch.Tensor:
    """Round-trip a tensor through 8-bit quantization without touching disk."""
    return ((tensor.detach().clamp(0.0, 1.0) * 255.0).round() / 255.0).float()
