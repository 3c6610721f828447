"""Toy-scale style transfer network with decoupled content/style injection.

Layout: a 2-down / middle / 2-up UNet over a (4, s, s) latent. Content enters
through (a) a lambda_c-scaled cross-attention stream in the down blocks and
(b) a trainable copy of the encoder (control branch) whose zero-convolution
outputs are fused into the middle and up block outputs with weight delta_c
(D_i' = D_i + delta_c * C_i). Style tokens from the resampler enter through
lambda_s-scaled cross-attention in the middle/up blocks of the base model and
inside the control branch, so the branch pre-adjusts the content features
toward the target style.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, replace

import torch
import torch.nn.functional as F
from torch import nn

from .diffusion import LatentState, NoisePrediction
from .latent import LATENT_FACTOR, LatentCodec
from .layers import (
    DualCrossAttention,
    Downsample,
    HintEncoder,
    PatchEncoder,
    PerceiverResampler,
    ResBlock,
    TimestepEmbedding,
    Upsample,
)
from .text import VOCAB, TextTokenizer


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 64
    patch_size: int = 8
    d_cond: int = 64
    widths: tuple[int, int] = (32, 64)
    latent_channels: int = 4
    encoder_depth: int = 1
    heads: int = 4
    n_style_tokens: int = 8
    resampler_depth: int = 2
    max_text_len: int = 8

    def __post_init__(self):
        if self.image_size % LATENT_FACTOR:
            raise ValueError(f"image_size must be divisible by {LATENT_FACTOR}")
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be divisible by patch_size")
        if self.latent_size % 4:
            raise ValueError("latent size (image_size / 4) must be divisible by 4")
        for w in (*self.widths, self.d_cond):
            if w % self.heads:
                raise ValueError(f"width {w} not divisible by heads ({self.heads})")

    @property
    def latent_size(self) -> int:
        return self.image_size // LATENT_FACTOR

    @property
    def n_image_tokens(self) -> int:
        return (self.image_size // self.patch_size) ** 2


@dataclass(frozen=True)
class InjectionConfig:
    """Scalar fusion knobs: control-branch weight, content/style attention
    weights, guidance factor, and the style token count."""

    delta_c: float = 0.5
    lambda_c: float = 1.0
    lambda_s: float = 1.0
    cfg_w: float = 7.5
    n_style_tokens: int = 8

    def __post_init__(self):
        import math

        for name in ("delta_c", "lambda_c", "lambda_s"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if not math.isfinite(self.cfg_w):
            raise ValueError("cfg_w must be finite")
        if self.n_style_tokens < 1:
            raise ValueError("n_style_tokens must be >= 1")

    @classmethod
    def training_defaults(cls, n_style_tokens: int = 8) -> "InjectionConfig":
        return cls(delta_c=1.0, lambda_c=1.0, lambda_s=1.0, cfg_w=1.0, n_style_tokens=n_style_tokens)


@dataclass(frozen=True)
class StyleTokens:
    tokens: torch.Tensor  # (n_style_tokens, d)


@dataclass(frozen=True)
class ContentTokens:
    tokens: torch.Tensor  # (m, d)


@dataclass(frozen=True)
class ControlResiduals:
    """Per fusion site residuals, ordered (middle, up1, up2)."""

    per_block: tuple[torch.Tensor, ...]


@dataclass(frozen=True)
class ConditionSet:
    """Resolved conditioning streams for one sample.

    caption_tokens are text embeddings (L, d). A dropped stream is replaced by
    its learned null token at predict time.
    """

    caption_tokens: torch.Tensor | None = None
    content_image: torch.Tensor | None = None
    style_image: torch.Tensor | None = None
    drop_text: bool = False
    drop_content: bool = False
    drop_style: bool = False

    def __post_init__(self):
        if self.caption_tokens is None and not self.drop_text:
            raise ValueError("caption stream must be present unless dropped to the null token")

    def nulled(self) -> "ConditionSet":
        return replace(self, drop_text=True, drop_content=True, drop_style=True)


class UNetEncoder(nn.Module):
    """conv_in + two down blocks + middle; shared by base model and branch."""

    def __init__(self, cfg: ModelConfig, time_dim: int):
        super().__init__()
        w0, w1 = cfg.widths
        d = cfg.d_cond
        self.conv_in = nn.Conv2d(cfg.latent_channels, w0, 3, padding=1)
        self.down1_res = ResBlock(w0, w0, time_dim)
        self.down1_attn = DualCrossAttention(w0, d, cfg.heads)
        self.down1_pool = Downsample(w0)
        self.down2_res = ResBlock(w0, w1, time_dim)
        self.down2_attn = DualCrossAttention(w1, d, cfg.heads)
        self.down2_pool = Downsample(w1)
        self.mid_res = ResBlock(w1, w1, time_dim)
        self.mid_attn = DualCrossAttention(w1, d, cfg.heads)

    def forward(
        self,
        z: torch.Tensor,
        temb: torch.Tensor,
        text_ctx: torch.Tensor,
        extra_down_ctx: torch.Tensor | None,
        extra_mid_ctx: torch.Tensor | None,
        lam_down: float,
        lam_mid: float,
        hint: torch.Tensor | None = None,
    ):
        h = self.conv_in(z)
        if hint is not None:
            h = h + hint
        h = self.down1_res(h, temb)
        h = self.down1_attn(h, text_ctx, extra_down_ctx, lam_down)
        d1 = h
        h = self.down1_pool(h)
        h = self.down2_res(h, temb)
        h = self.down2_attn(h, text_ctx, extra_down_ctx, lam_down)
        d2 = h
        h = self.down2_pool(h)
        h = self.mid_res(h, temb)
        m = self.mid_attn(h, text_ctx, extra_mid_ctx, lam_mid)
        return d1, d2, m


class BaseUNet(nn.Module):
    """Noise predictor with content attention in down blocks, style attention
    in middle/up blocks, and additive control residual fusion."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        w0, w1 = cfg.widths
        d = cfg.d_cond
        time_dim = w0 * 4
        self.time_embed = TimestepEmbedding(time_dim)
        self.encoder = UNetEncoder(cfg, time_dim)
        self.up1_up = Upsample(w1)
        self.up1_res = ResBlock(w1 + w1, w1, time_dim)
        self.up1_attn = DualCrossAttention(w1, d, cfg.heads)
        self.up2_up = Upsample(w1)
        self.up2_res = ResBlock(w1 + w0, w0, time_dim)
        self.up2_attn = DualCrossAttention(w0, d, cfg.heads)
        self.out_norm = nn.GroupNorm(min(8, w0), w0)
        self.out_conv = nn.Conv2d(w0, cfg.latent_channels, 3, padding=1)

    def residual_shapes(self, latent_size: int) -> list[tuple[int, int, int]]:
        w0, w1 = self.cfg.widths
        s = latent_size
        return [(w1, s // 4, s // 4), (w1, s // 2, s // 2), (w0, s, s)]

    def forward(
        self,
        z: torch.Tensor,
        t: torch.Tensor,
        text_ctx: torch.Tensor,
        content_ctx: torch.Tensor,
        style_ctx: torch.Tensor,
        residuals: list[torch.Tensor] | None,
        delta_c: float,
        lambda_c: float,
        lambda_s: float,
        trace: dict | None = None,
    ) -> torch.Tensor:
        temb = self.time_embed(t)
        d1, d2, m = self.encoder(z, temb, text_ctx, content_ctx, style_ctx, lambda_c, lambda_s)
        if residuals is None:
            residuals = [
                torch.zeros(z.shape[0], *shape, dtype=z.dtype, device=z.device)
                for shape in self.residual_shapes(z.shape[-1])
            ]

        def fuse(h, r, site):
            fused = h + delta_c * r
            if trace is not None:
                trace[site] = {"pre": h.detach(), "residual": r.detach(), "post": fused.detach()}
            return fused

        m = fuse(m, residuals[0], "middle")
        h = self.up1_up(m)
        h = self.up1_res(torch.cat([h, d2], dim=1), temb)
        h = self.up1_attn(h, text_ctx, style_ctx, lambda_s)
        h = fuse(h, residuals[1], "up1")
        h = self.up2_up(h)
        h = self.up2_res(torch.cat([h, d1], dim=1), temb)
        h = self.up2_attn(h, text_ctx, style_ctx, lambda_s)
        h = fuse(h, residuals[2], "up2")
        return self.out_conv(F.silu(self.out_norm(h)))


class ControlBranch(nn.Module):
    """Trainable copy of the base encoder with zero-convolution outputs.

    The extra attention stream inside the branch attends style tokens (weight
    lambda_s) in every block, so content features are style-adjusted before
    fusion. A fresh branch emits exactly zero residuals.
    """

    def __init__(self, base: BaseUNet):
        super().__init__()
        cfg = base.cfg
        w0, w1 = cfg.widths
        self.time_embed = copy.deepcopy(base.time_embed)
        self.encoder = copy.deepcopy(base.encoder)
        self.hint_encoder = HintEncoder(w0)
        self.zero_mid = _zero_conv(w1)
        self.zero_up1 = _zero_conv(w1)
        self.zero_up2 = _zero_conv(w0)

    def forward(
        self,
        z: torch.Tensor,
        t: torch.Tensor,
        content_images: torch.Tensor,
        text_ctx: torch.Tensor,
        style_ctx: torch.Tensor | None,
        lambda_s: float,
    ) -> list[torch.Tensor]:
        temb = self.time_embed(t)
        hint = self.hint_encoder(content_images)
        d1, d2, m = self.encoder(
            z, temb, text_ctx, style_ctx, style_ctx, lambda_s, lambda_s, hint=hint
        )
        return [self.zero_mid(m), self.zero_up1(d2), self.zero_up2(d1)]


def _zero_conv(channels: int) -> nn.Conv2d:
    conv = nn.Conv2d(channels, channels, 1)
    nn.init.zeros_(conv.weight)
    nn.init.zeros_(conv.bias)
    return conv


def init_control_branch(base: BaseUNet) -> ControlBranch:
    """Build a control branch whose weights copy the base encoder and whose
    output projections are zero-initialized."""
    return ControlBranch(base)


class CsgoModel(nn.Module):
    """Assembled network: codec, text table, patch encoder, projection heads,
    base UNet, and control branch."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.codec = LatentCodec()
        self.tokenizer = TextTokenizer(max_len=cfg.max_text_len)
        self.text_embed = nn.Embedding(len(VOCAB), cfg.d_cond)
        self.image_encoder = PatchEncoder(cfg.patch_size, cfg.d_cond, cfg.encoder_depth, cfg.heads)
        self.content_proj = nn.Linear(cfg.d_cond, cfg.d_cond)
        self.style_resampler = PerceiverResampler(
            cfg.d_cond, cfg.n_style_tokens, cfg.resampler_depth, cfg.heads
        )
        self.base = BaseUNet(cfg)
        self.branch = init_control_branch(self.base)
        self.null_text = nn.Parameter(torch.zeros(cfg.d_cond))
        self.null_content = nn.Parameter(torch.zeros(cfg.d_cond))
        self.null_style = nn.Parameter(torch.zeros(cfg.d_cond))

    @property
    def dtype(self) -> torch.dtype:
        return self.text_embed.weight.dtype

    def embed_prompt(self, prompt: str) -> torch.Tensor:
        return self.text_embed(self.tokenizer.encode(prompt))

    def make_conditions(
        self,
        prompt: str | None,
        content_image: torch.Tensor | None = None,
        style_image: torch.Tensor | None = None,
    ) -> ConditionSet:
        return ConditionSet(
            caption_tokens=None if prompt is None else self.embed_prompt(prompt),
            content_image=content_image,
            style_image=style_image,
            drop_text=prompt is None,
            drop_content=content_image is None,
            drop_style=style_image is None,
        )

    def _null_ctx(self, param: torch.Tensor, length: int, batch: int) -> torch.Tensor:
        return param.view(1, 1, -1).expand(batch, length, -1)

    def predict_single(
        self, z: torch.Tensor, t: int, cond: ConditionSet, inj: InjectionConfig
    ) -> torch.Tensor:
        cfg = self.cfg
        if inj.n_style_tokens != cfg.n_style_tokens:
            raise ValueError(
                f"injection n_style_tokens ({inj.n_style_tokens}) != model ({cfg.n_style_tokens})"
            )
        z = z.to(self.dtype).unsqueeze(0)
        tt = torch.tensor([t], dtype=torch.long)

        if cond.drop_text or cond.caption_tokens is None:
            text = self._null_ctx(self.null_text, cfg.max_text_len, 1)
        else:
            text = cond.caption_tokens.to(self.dtype).unsqueeze(0)

        if cond.drop_style or cond.style_image is None:
            style = self._null_ctx(self.null_style, cfg.n_style_tokens, 1)
        else:
            simg = cond.style_image.to(self.dtype).unsqueeze(0)
            style = self.style_resampler(self.image_encoder(simg))

        if cond.drop_content or cond.content_image is None:
            content = self._null_ctx(self.null_content, cfg.n_image_tokens, 1)
            residuals = None  # branch disabled: residuals identically zero
        else:
            cimg = cond.content_image.to(self.dtype).unsqueeze(0)
            content = self.content_proj(self.image_encoder(cimg))
            residuals = self.branch(z, tt, cimg, text, style, inj.lambda_s)

        eps = self.base(
            z, tt, text, content, style, residuals, inj.delta_c, inj.lambda_c, inj.lambda_s
        )
        return eps.squeeze(0)

    def conditioned_eps(
        self,
        z: torch.Tensor,
        t: torch.Tensor,
        caption_ids: torch.Tensor,
        content_images: torch.Tensor,
        style_images: torch.Tensor,
        keep_text: torch.Tensor,
        keep_content: torch.Tensor,
        keep_style: torch.Tensor,
        inj: InjectionConfig,
    ) -> torch.Tensor:
        """Batched prediction with per-sample null substitution for dropped
        streams; control residuals of content-dropped samples are zeroed."""
        b = z.shape[0]
        cfg = self.cfg
        z = z.to(self.dtype)
        content_images = content_images.to(self.dtype)
        style_images = style_images.to(self.dtype)

        text = self.text_embed(caption_ids)
        text = torch.where(keep_text.view(b, 1, 1), text, self.null_text.view(1, 1, -1))

        style = self.style_resampler(self.image_encoder(style_images))
        style = torch.where(keep_style.view(b, 1, 1), style, self.null_style.view(1, 1, -1))

        content = self.content_proj(self.image_encoder(content_images))
        content = torch.where(
            keep_content.view(b, 1, 1), content, self.null_content.view(1, 1, -1)
        )

        residuals = self.branch(z, t, content_images, text, style, inj.lambda_s)
        mask = keep_content.view(b, 1, 1, 1).to(z.dtype)
        residuals = [r * mask for r in residuals]
        return self.base(
            z, t, text, content, style, residuals, inj.delta_c, inj.lambda_c, inj.lambda_s
        )

    def predictor(self, inj: InjectionConfig):
        """Adapt the model to the sampler's (z, t, conditions) protocol."""

        def fn(z: torch.Tensor, t: int, conditions: ConditionSet) -> NoisePrediction:
            with torch.no_grad():
                return NoisePrediction(self.predict_single(z, t, conditions, inj))

        return fn


def build_model(cfg: ModelConfig, seed: int = 0) -> CsgoModel:
    """Construct a model with seeded, reproducible parameter initialization."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = CsgoModel(cfg)
    return model


# ---------------------------------------------------------------------------
# Single-sample operation surface


def encode_image(encoder: PatchEncoder, image: torch.Tensor) -> torch.Tensor:
    """Image (3, H, W) in [0, 1] -> (o, d) patch tokens."""
    if image.dim() != 3 or image.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) image, got {tuple(image.shape)}")
    if bool((image < 0).any()) or bool((image > 1).any()):
        raise ValueError("pixel values must lie in [0, 1]")
    return encoder(image.unsqueeze(0)).squeeze(0)


def style_project(resampler: PerceiverResampler, raw: torch.Tensor) -> StyleTokens:
    tokens = resampler(raw.unsqueeze(0)).squeeze(0)
    return StyleTokens(tokens=tokens)


def content_project(projection: nn.Linear, raw: torch.Tensor) -> ContentTokens:
    if raw.shape[-1] != projection.in_features:
        raise ValueError(f"token width {raw.shape[-1]} != projection width {projection.in_features}")
    return ContentTokens(tokens=projection(raw))


def control_forward(
    branch: ControlBranch,
    content_image: torch.Tensor,
    caption_tokens: torch.Tensor,
    style_tokens: StyleTokens,
    z_t: LatentState,
    lambda_s: float,
) -> ControlResiduals:
    residuals = branch(
        z_t.z.unsqueeze(0),
        torch.tensor([z_t.t], dtype=torch.long),
        content_image.unsqueeze(0),
        caption_tokens.unsqueeze(0),
        style_tokens.tokens.unsqueeze(0),
        lambda_s,
    )
    return ControlResiduals(per_block=tuple(r.squeeze(0) for r in residuals))


def base_forward(
    unet: BaseUNet,
    z_t: LatentState,
    caption_tokens: torch.Tensor,
    content_tokens: ContentTokens,
    style_tokens: StyleTokens,
    residuals: ControlResiduals | None,
    cfg: InjectionConfig,
    trace: dict | None = None,
) -> NoisePrediction:
    res = None
    if residuals is not None:
        res = [r.unsqueeze(0) for r in residuals.per_block]
        expected = unet.residual_shapes(z_t.z.shape[-1])
        got = [tuple(r.shape) for r in residuals.per_block]
        if got != expected:
            raise ValueError(f"residual shapes {got} do not match fusion sites {expected}")
    eps = unet(
        z_t.z.unsqueeze(0),
        torch.tensor([z_t.t], dtype=torch.long),
        caption_tokens.unsqueeze(0),
        content_tokens.tokens.unsqueeze(0),
        style_tokens.tokens.unsqueeze(0),
        res,
        cfg.delta_c,
        cfg.lambda_c,
        cfg.lambda_s,
        trace=trace,
    )
    return NoisePrediction(eps_hat=eps.squeeze(0))


def csgo_predict(
    model: CsgoModel, z_t: LatentState, conditions: ConditionSet, cfg: InjectionConfig
) -> NoisePrediction:
    """Full conditional prediction: encoders -> projections -> branch -> base."""
    return NoisePrediction(model.predict_single(z_t.z, z_t.t, conditions, cfg))
