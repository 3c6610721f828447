"""Network building blocks: resblocks, decoupled cross-attention, encoders."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


def zero_module(module: nn.Module) -> nn.Module:
    """Zero all parameters of a module in place (zero-convolution init)."""
    for p in module.parameters():
        nn.init.zeros_(p)
    return module


def _groups(channels: int) -> int:
    g = min(8, channels)
    while channels % g:
        g -= 1
    return g


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float32) / max(half - 1, 1)
    ).to(t.device)
    args = t.float()[:, None] * freqs[None, :]
    emb = torch.cat([args.sin(), args.cos()], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class TimestepEmbedding(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.mlp = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        emb = sinusoidal_embedding(t, self.dim).to(self.mlp[0].weight.dtype)
        return self.mlp(emb)


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, time_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch)
        self.norm2 = nn.GroupNorm(_groups(out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


def scaled_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, heads: int) -> torch.Tensor:
    """Plain multi-head softmax attention over (B, N, C) token tensors."""
    b, nq, c = q.shape
    nk = k.shape[1]
    dh = c // heads
    q = q.view(b, nq, heads, dh).transpose(1, 2)
    k = k.view(b, nk, heads, dh).transpose(1, 2)
    v = v.view(b, nk, heads, dh).transpose(1, 2)
    attn = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(dh), dim=-1)
    out = (attn @ v).transpose(1, 2).reshape(b, nq, c)
    return out


class DualCrossAttention(nn.Module):
    """Text cross-attention plus a lambda-scaled extra token stream.

    Both streams share the query built from the block's hidden states; the
    extra stream has its own key/value/output projections (decoupled), with
    the output projection zero-initialized so a fresh block ignores it:

        h' = h + TextAttn(h) + scale * ExtraAttn(h)
    """

    def __init__(self, channels: int, ctx_dim: int, heads: int = 4):
        super().__init__()
        if channels % heads:
            raise ValueError(f"channels ({channels}) must be divisible by heads ({heads})")
        self.heads = heads
        self.norm = nn.GroupNorm(_groups(channels), channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k_text = nn.Linear(ctx_dim, channels, bias=False)
        self.to_v_text = nn.Linear(ctx_dim, channels, bias=False)
        self.to_out_text = nn.Linear(channels, channels)
        self.to_k_extra = nn.Linear(ctx_dim, channels, bias=False)
        self.to_v_extra = nn.Linear(ctx_dim, channels, bias=False)
        self.to_out_extra = zero_module(nn.Linear(channels, channels))

    def forward(
        self,
        h: torch.Tensor,
        text_ctx: torch.Tensor,
        extra_ctx: torch.Tensor | None,
        scale: float,
    ) -> torch.Tensor:
        b, c, height, width = h.shape
        x = self.norm(h).view(b, c, height * width).transpose(1, 2)
        q = self.to_q(x)
        text_out = self.to_out_text(
            scaled_attention(q, self.to_k_text(text_ctx), self.to_v_text(text_ctx), self.heads)
        )
        h = h + text_out.transpose(1, 2).view(b, c, height, width)
        if extra_ctx is not None:
            extra_out = self.to_out_extra(
                scaled_attention(q, self.to_k_extra(extra_ctx), self.to_v_extra(extra_ctx), self.heads)
            )
            h = h + scale * extra_out.transpose(1, 2).view(b, c, height, width)
        return h


class Downsample(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


class SelfAttentionBlock(nn.Module):
    """Pre-norm transformer block used by the patch encoder."""

    def __init__(self, dim: int, heads: int = 4):
        super().__init__()
        self.heads = heads
        self.ln1 = nn.LayerNorm(dim)
        self.to_q = nn.Linear(dim, dim, bias=False)
        self.to_k = nn.Linear(dim, dim, bias=False)
        self.to_v = nn.Linear(dim, dim, bias=False)
        self.to_out = nn.Linear(dim, dim)
        self.ln2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, dim * 4), nn.GELU(), nn.Linear(dim * 4, dim))

    def forward(self, x):
        y = self.ln1(x)
        x = x + self.to_out(scaled_attention(self.to_q(y), self.to_k(y), self.to_v(y), self.heads))
        return x + self.mlp(self.ln2(x))


class PatchEncoder(nn.Module):
    """Image -> (B, o, d) patch tokens, o = (H/patch) * (W/patch).

    With depth=0 the tokens are purely local (one patch, one token); mixing
    layers can be added via depth.
    """

    def __init__(self, patch_size: int, dim: int, depth: int = 1, heads: int = 4):
        super().__init__()
        self.patch_size = patch_size
        self.proj = nn.Conv2d(3, dim, patch_size, stride=patch_size)
        self.blocks = nn.ModuleList(SelfAttentionBlock(dim, heads) for _ in range(depth))

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.shape[-1] % self.patch_size or images.shape[-2] % self.patch_size:
            raise ValueError(
                f"image size {tuple(images.shape[-2:])} not divisible by patch size {self.patch_size}"
            )
        x = self.proj(images)
        x = x.flatten(2).transpose(1, 2)
        for block in self.blocks:
            x = block(x)
        return x


class PerceiverResampler(nn.Module):
    """Map a variable number of input tokens to a fixed set of learned latents.

    Attention output and feed-forward output projections are zero-initialized,
    so at initialization the module returns the latent queries unchanged.
    """

    def __init__(self, dim: int, n_latents: int, depth: int = 2, heads: int = 4):
        super().__init__()
        self.heads = heads
        self.n_latents = n_latents
        self.latents = nn.Parameter(torch.randn(n_latents, dim) * 0.02)
        self.layers = nn.ModuleList()
        for _ in range(depth):
            self.layers.append(
                nn.ModuleDict(
                    {
                        "ln_q": nn.LayerNorm(dim),
                        "ln_kv": nn.LayerNorm(dim),
                        "to_q": nn.Linear(dim, dim, bias=False),
                        "to_k": nn.Linear(dim, dim, bias=False),
                        "to_v": nn.Linear(dim, dim, bias=False),
                        "to_out": zero_module(nn.Linear(dim, dim)),
                        "ln_ff": nn.LayerNorm(dim),
                        "ff": nn.Sequential(
                            nn.Linear(dim, dim * 4),
                            nn.GELU(),
                            zero_module(nn.Linear(dim * 4, dim)),
                        ),
                    }
                )
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.latents.shape[-1]:
            raise ValueError(
                f"token width {x.shape[-1]} != resampler width {self.latents.shape[-1]}"
            )
        lat = self.latents.unsqueeze(0).expand(x.shape[0], -1, -1)
        for layer in self.layers:
            q = layer["to_q"](layer["ln_q"](lat))
            kv = layer["ln_kv"](x)
            lat = lat + layer["to_out"](
                scaled_attention(q, layer["to_k"](kv), layer["to_v"](kv), self.heads)
            )
            lat = lat + layer["ff"](layer["ln_ff"](lat))
        return lat


class HintEncoder(nn.Module):
    """Content-image hint for the control branch, downsampled to latent grid.

    Two stride-2 convolutions match the fixed 4x pixel/latent factor; the
    final projection is zero-initialized.
    """

    def __init__(self, out_channels: int):
        super().__init__()
        mid = max(out_channels // 2, 4)
        self.net = nn.Sequential(
            nn.Conv2d(3, mid, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(mid, out_channels, 3, stride=2, padding=1),
            nn.SiLU(),
            zero_module(nn.Conv2d(out_channels, out_channels, 3, padding=1)),
        )

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.net(images)
