"""Content alignment scoring and a style-statistics distance.

The content score strips style by normalizing features per channel across
tokens (subtract mean, divide by standard deviation) and takes the squared
Euclidean distance between the normalized feature maps of the two images.
The style distance compares exactly the statistics that normalization
discards: the concatenated per-channel (mean, std) vectors.

Any callable mapping an image to a (tokens, channels) feature tensor can act
as the extractor, so stronger pretrained encoders plug in without code
changes; the built-ins are a flattened-pixel extractor (channelwise linear)
and a fixed random convolution stack.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch
from torch import nn

ADA_EPSILON = 1e-6


@dataclass(frozen=True)
class FeatureExtractor:
    """Deterministic image -> (tokens, channels) feature map with a descriptor."""

    fn: Callable[[torch.Tensor], torch.Tensor]
    descriptor: str

    def __call__(self, image: torch.Tensor) -> torch.Tensor:
        feats = self.fn(image)
        if feats.dim() != 2:
            raise ValueError(f"extractor must return (tokens, channels), got {tuple(feats.shape)}")
        return feats


@dataclass(frozen=True)
class CasResult:
    score: float
    extractor_descriptor: str

    def __post_init__(self):
        if not (self.score >= 0):
            raise ValueError(f"score must be >= 0, got {self.score}")


def ada_normalize(features: torch.Tensor, epsilon: float = ADA_EPSILON) -> torch.Tensor:
    """Remove per-channel mean and standard deviation across the token axis.

    Constant channels normalize to zero via the epsilon-regularized divisor.
    """
    if features.dim() != 2:
        raise ValueError(f"expected (tokens, channels) features, got {tuple(features.shape)}")
    if features.shape[0] < 2:
        raise ValueError("need at least 2 tokens to normalize (variance undefined)")
    mu = features.mean(dim=0, keepdim=True)
    rho = features.std(dim=0, keepdim=True, unbiased=False)
    return (features - mu) / (rho + epsilon)


def cas(extractor: FeatureExtractor, image_a: torch.Tensor, image_b: torch.Tensor) -> CasResult:
    """Squared distance between style-stripped features of the two images."""
    if image_a.shape != image_b.shape:
        raise ValueError(
            f"image resolutions differ: {tuple(image_a.shape)} vs {tuple(image_b.shape)}"
        )
    fa = ada_normalize(extractor(image_a))
    fb = ada_normalize(extractor(image_b))
    score = float(((fa - fb) ** 2).sum())
    return CasResult(score=score, extractor_descriptor=extractor.descriptor)


def _channel_stats(features: torch.Tensor) -> torch.Tensor:
    mu = features.mean(dim=0)
    sd = features.std(dim=0, unbiased=False)
    return torch.cat([mu, sd])


def style_stat_distance(
    image_a: torch.Tensor,
    image_b: torch.Tensor,
    extractor: FeatureExtractor | None = None,
) -> float:
    """Euclidean distance between per-channel (mean, std) feature statistics."""
    if image_a.shape != image_b.shape:
        raise ValueError(
            f"image resolutions differ: {tuple(image_a.shape)} vs {tuple(image_b.shape)}"
        )
    extractor = extractor or flatten_extractor()
    sa = _channel_stats(extractor(image_a))
    sb = _channel_stats(extractor(image_b))
    return float(torch.linalg.vector_norm(sa - sb))


def flatten_extractor() -> FeatureExtractor:
    """Raw pixels as tokens: (3, H, W) -> (H*W, 3); 1-D inputs -> (N, 1).

    Channelwise linear, so per-channel affine recoloring leaves the normalized
    features unchanged.
    """

    def fn(image: torch.Tensor) -> torch.Tensor:
        if image.dim() == 1:
            return image.unsqueeze(1)
        if image.dim() == 2:
            return image.reshape(-1, 1)
        if image.dim() == 3:
            return image.permute(1, 2, 0).reshape(-1, image.shape[0])
        raise ValueError(f"unsupported image shape {tuple(image.shape)}")

    return FeatureExtractor(fn=fn, descriptor="flatten-pixels")


def conv_extractor(seed: int = 0, channels: int = 16) -> FeatureExtractor:
    """Fixed random-weight convolution stack; default reference extractor."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        net = nn.Sequential(
            nn.Conv2d(3, channels, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(channels, channels, 3, stride=2, padding=1),
        )
    net.eval()
    for p in net.parameters():
        p.requires_grad_(False)

    def fn(image: torch.Tensor) -> torch.Tensor:
        if image.dim() != 3 or image.shape[0] != 3:
            raise ValueError(f"expected (3, H, W) image, got {tuple(image.shape)}")
        with torch.no_grad():
            feats = net(image.unsqueeze(0)).squeeze(0)
        return feats.permute(1, 2, 0).reshape(-1, feats.shape[0])

    return FeatureExtractor(fn=fn, descriptor=f"convstack-seed{seed}-c{channels}")


def patch_extractor(encoder, descriptor: str = "patch-encoder") -> FeatureExtractor:
    """Adapter exposing the model's own patch encoder as a feature extractor."""

    def fn(image: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return encoder(image.unsqueeze(0)).squeeze(0)

    return FeatureExtractor(fn=fn, descriptor=descriptor)


DEFAULT_EXTRACTOR = conv_extractor
