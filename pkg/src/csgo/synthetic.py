"""Synthetic toy images and a deterministic reference stylizer.

All images are piecewise constant on 4x4 pixel blocks so they survive the
fixed latent codec exactly. The reference stylizer recolors the content image
to match the style image's per-channel pixel statistics, which by design
yields near-zero content-alignment distance under a channelwise-linear
extractor while moving the style statistics onto the style image's.
"""

from __future__ import annotations

import torch

from .latent import LATENT_FACTOR

CELL = LATENT_FACTOR


def _rng(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(seed)
    return g


def _upsample(grid: torch.Tensor) -> torch.Tensor:
    return grid.repeat_interleave(CELL, dim=-2).repeat_interleave(CELL, dim=-1)


def blocky_noise(size: int = 64, seed: int = 0) -> torch.Tensor:
    g = _rng(seed)
    n = size // CELL
    return _upsample(torch.rand((3, n, n), generator=g))


def random_content_image(size: int = 64, seed: int = 0) -> torch.Tensor:
    """Background plus a few axis-aligned colored rectangles on the block grid."""
    g = _rng(seed)
    n = size // CELL
    bg = 0.2 + 0.6 * torch.rand(3, generator=g)
    grid = bg[:, None, None].repeat(1, n, n)
    k = int(torch.randint(2, 5, (1,), generator=g))
    for _ in range(k):
        color = 0.2 + 0.6 * torch.rand(3, generator=g)
        w = int(torch.randint(2, max(n // 2, 3), (1,), generator=g))
        h = int(torch.randint(2, max(n // 2, 3), (1,), generator=g))
        x0 = int(torch.randint(0, n - w + 1, (1,), generator=g))
        y0 = int(torch.randint(0, n - h + 1, (1,), generator=g))
        grid[:, y0 : y0 + h, x0 : x0 + w] = color[:, None, None]
    return _upsample(grid)


def random_style_image(size: int = 64, seed: int = 0) -> torch.Tensor:
    """Two-color diagonal stripe pattern; each seed gives a distinct palette."""
    g = _rng(seed)
    n = size // CELL
    c1 = 0.15 + 0.7 * torch.rand(3, generator=g)
    c2 = 0.15 + 0.7 * torch.rand(3, generator=g)
    period = int(torch.randint(2, 6, (1,), generator=g))
    yy, xx = torch.meshgrid(torch.arange(n), torch.arange(n), indexing="ij")
    mask = ((xx + yy) // period) % 2 == 0
    grid = torch.where(mask[None], c1[:, None, None], c2[:, None, None])
    return _upsample(grid)


def synthetic_stylize(content: torch.Tensor, style: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Recolor content to the style image's per-channel mean/std, clamped."""
    dims = (-2, -1)
    mu_c = content.mean(dim=dims, keepdim=True)
    sd_c = content.std(dim=dims, keepdim=True, unbiased=False)
    mu_s = style.mean(dim=dims, keepdim=True)
    sd_s = style.std(dim=dims, keepdim=True, unbiased=False)
    out = (content - mu_c) / (sd_c + eps) * sd_s + mu_s
    return out.clamp(0.0, 1.0)


def corrupt_blocks(base: torch.Tensor, level: float, seed: int) -> torch.Tensor:
    """Replace a `level` fraction of 4x4 blocks with noise.

    Block replacement order is fixed per seed, so corruption sets are nested
    across levels: every block corrupted at level a is corrupted at any b >= a.
    """
    if not (0.0 <= level <= 1.0):
        raise ValueError(f"corruption level must lie in [0, 1], got {level}")
    size = base.shape[-1]
    n = size // CELL
    g = _rng(seed)
    noise = torch.rand((3, n, n), generator=g)
    order = torch.randperm(n * n, generator=g)
    k = int(round(level * n * n))
    mask = torch.zeros(n * n, dtype=torch.bool)
    mask[order[:k]] = True
    mask = mask.view(n, n)
    grid_base = base[:, ::CELL, ::CELL]
    grid = torch.where(mask[None], noise, grid_base)
    return _upsample(grid)
