"""Generation modes: image-driven transfer, text-driven synthesis, text-edit.

All three modes run the same guided sampler over the same RNG consumption
order; they differ only in which condition streams are active. Text-driven
synthesis nulls the content token stream and disables the control branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .diffusion import NoiseSchedule, sample
from .model import ConditionSet, CsgoModel, InjectionConfig

MODES = ("transfer", "text_driven", "text_edit")


@dataclass(frozen=True)
class GenerationRequest:
    mode: str
    style_image: torch.Tensor
    prompt: str
    config: InjectionConfig
    seed: int
    steps: int
    content_image: torch.Tensor | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.style_image is None:
            raise ValueError("style_image is required")
        if self.mode in ("transfer", "text_edit") and self.content_image is None:
            raise ValueError(f"mode {self.mode!r} requires a content image")
        if self.mode == "text_driven" and self.content_image is not None:
            raise ValueError("text_driven mode forbids a content image")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


def _check_size(model: CsgoModel, image: torch.Tensor, name: str) -> None:
    expected = (3, model.cfg.image_size, model.cfg.image_size)
    if tuple(image.shape) != expected:
        raise ValueError(f"{name} shape {tuple(image.shape)} != model input {expected}")


def _run(
    model: CsgoModel,
    schedule: NoiseSchedule,
    conditions: ConditionSet,
    inj: InjectionConfig,
    seed: int,
    steps: int,
) -> torch.Tensor:
    shape = (model.codec.channels, model.cfg.latent_size, model.cfg.latent_size)
    latent = sample(
        model.predictor(inj), conditions, schedule, inj.cfg_w, steps, seed, shape,
        dtype=model.dtype,
    )
    image = model.codec.decode(latent)
    assert bool((image >= 0).all()) and bool((image <= 1).all())
    return image


def style_transfer(
    model: CsgoModel, schedule: NoiseSchedule, request: GenerationRequest
) -> torch.Tensor:
    if request.mode not in ("transfer", "text_edit"):
        raise ValueError(f"expected transfer/text_edit request, got mode {request.mode!r}")
    _check_size(model, request.style_image, "style image")
    _check_size(model, request.content_image, "content image")
    conditions = model.make_conditions(
        request.prompt, request.content_image, request.style_image
    )
    return _run(model, schedule, conditions, request.config, request.seed, request.steps)


def text_driven_synthesis(
    model: CsgoModel, schedule: NoiseSchedule, request: GenerationRequest
) -> torch.Tensor:
    if request.mode != "text_driven":
        raise ValueError(f"expected text_driven request, got mode {request.mode!r}")
    _check_size(model, request.style_image, "style image")
    conditions = model.make_conditions(request.prompt, None, request.style_image)
    return _run(model, schedule, conditions, request.config, request.seed, request.steps)


def text_edit_transfer(
    model: CsgoModel, schedule: NoiseSchedule, request: GenerationRequest
) -> torch.Tensor:
    """Transfer with the caller's edited prompt fed to base model and branch."""
    if request.mode != "text_edit":
        raise ValueError(f"expected text_edit request, got mode {request.mode!r}")
    return style_transfer(model, schedule, request)


def generate(
    model: CsgoModel, schedule: NoiseSchedule, request: GenerationRequest
) -> torch.Tensor:
    if request.mode == "transfer":
        return style_transfer(model, schedule, request)
    if request.mode == "text_driven":
        return text_driven_synthesis(model, schedule, request)
    return text_edit_transfer(model, schedule, request)
