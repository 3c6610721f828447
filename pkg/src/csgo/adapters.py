"""Low-rank adapters over the base UNet attention projections.

Adapters train on a single image with a text-only objective; the trained set
is then split by an explicit block partition: down-block adapters carry
content, up-block adapters carry style. Combining the content part of one
image with the style part of another yields a candidate generator for triplet
construction. (The implicit separation this stands in for is unstable, which
is why score-based cleaning stays mandatory downstream.)
"""

from __future__ import annotations

import copy
import hashlib
import threading
from typing import Iterable

import torch
from torch import nn

from .diffusion import NoiseSchedule, sample
from .model import BaseUNet, CsgoModel, InjectionConfig
from .text import COMBINED_PROMPT, CONTENT_PROMPT, STYLE_PROMPT
from .training import TrainConfig, TrainingBatch, diffusion_loss

CONTENT_PREFIX = "encoder.down"
STYLE_PREFIX = "up"


class AdaptedLinear(nn.Module):
    """Linear layer plus a trainable rank-r correction: y = Wx + b + B(Ax)."""

    def __init__(self, inner: nn.Linear, rank: int):
        super().__init__()
        self.inner = inner
        self.down = nn.Linear(inner.in_features, rank, bias=False)
        self.up = nn.Linear(rank, inner.out_features, bias=False)
        nn.init.normal_(self.down.weight, std=1.0 / rank)
        nn.init.zeros_(self.up.weight)

    def forward(self, x):
        return self.inner(x) + self.up(self.down(x))

    def delta_weight(self) -> torch.Tensor:
        return self.up.weight @ self.down.weight


def _attention_linears(unet: BaseUNet) -> Iterable[tuple[str, nn.Module, str]]:
    for block_name, block in unet.named_modules():
        if type(block).__name__ != "DualCrossAttention":
            continue
        if not (block_name.startswith(CONTENT_PREFIX) or block_name.startswith(STYLE_PREFIX)):
            continue
        for attr in ("to_q", "to_k_text", "to_v_text", "to_out_text"):
            yield f"{block_name}.{attr}", block, attr


def attach_adapters(unet: BaseUNet, rank: int, seed: int = 0) -> dict[str, AdaptedLinear]:
    """Wrap down/up block text-attention projections with rank-r adapters."""
    adapters = {}
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        for name, block, attr in _attention_linears(unet):
            wrapped = AdaptedLinear(getattr(block, attr), rank)
            setattr(block, attr, wrapped)
            adapters[name] = wrapped
    return adapters


def adapter_state(adapters: dict[str, AdaptedLinear]) -> dict[str, dict[str, torch.Tensor]]:
    return {
        name: {"down": a.down.weight.detach().clone(), "up": a.up.weight.detach().clone()}
        for name, a in adapters.items()
    }


def load_adapter_state(
    adapters: dict[str, AdaptedLinear],
    state: dict[str, dict[str, torch.Tensor]],
    prefix: str,
) -> None:
    with torch.no_grad():
        for name, tensors in state.items():
            if not name.startswith(prefix):
                continue
            adapters[name].down.weight.copy_(tensors["down"])
            adapters[name].up.weight.copy_(tensors["up"])


def split_adapter_state(state: dict) -> tuple[dict, dict]:
    """(content part, style part): down-block adapters vs up-block adapters."""
    content = {k: v for k, v in state.items() if k.startswith(CONTENT_PREFIX)}
    style = {k: v for k, v in state.items() if k.startswith(STYLE_PREFIX)}
    return content, style


def train_image_adapter(
    model: CsgoModel,
    image: torch.Tensor,
    caption: str,
    schedule: NoiseSchedule,
    schedule_params: dict,
    rank: int,
    steps: int,
    lr: float,
    seed: int,
) -> dict[str, dict[str, torch.Tensor]]:
    """Fit adapters for one image with a text-only diffusion objective.

    The base weights stay frozen; only adapter parameters receive updates.
    The caller's model is never mutated.
    """
    work = copy.deepcopy(model)
    adapters = attach_adapters(work.base, rank, seed)
    for p in work.parameters():
        p.requires_grad_(False)
    params = []
    for a in adapters.values():
        a.down.weight.requires_grad_(True)
        a.up.weight.requires_grad_(True)
        params += [a.down.weight, a.up.weight]
    optimizer = torch.optim.Adam(params, lr=lr)
    rng = torch.Generator().manual_seed(seed)
    cap_ids = work.tokenizer.encode(caption).unsqueeze(0)
    batch = TrainingBatch(
        content_images=image.unsqueeze(0),
        style_images=image.unsqueeze(0),
        target_images=image.unsqueeze(0),
        captions=cap_ids,
        drop_content=torch.ones(1, dtype=torch.bool),
        drop_style=torch.ones(1, dtype=torch.bool),
    )
    injection = InjectionConfig.training_defaults(work.cfg.n_style_tokens)
    work.train()
    for _ in range(steps):
        loss = diffusion_loss(work, batch, schedule, rng, injection)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    work.eval()
    return adapter_state(adapters)


def _image_key(image: torch.Tensor, caption: str) -> str:
    digest = hashlib.sha1(
        (image.detach().clamp(0, 1) * 255).round().byte().numpy().tobytes()
    ).hexdigest()
    return f"{digest}:{caption}"


def _image_seed(key: str) -> int:
    return int.from_bytes(hashlib.sha1(key.encode()).digest()[:4], "big") % (2**31 - 1)


class AdapterCandidateGenerator:
    """Candidate generator combining per-image adapter parts.

    Adapters are cached per unique image, so shared content or style images
    across pairs train once. Adapter training seeds derive from the image
    itself, keeping cached and uncached runs identical.
    """

    def __init__(
        self,
        model: CsgoModel,
        schedule_params: dict,
        rank: int = 4,
        train_steps: int = 50,
        lr: float = 1e-3,
        sample_steps: int = 20,
        cfg_w: float = 1.0,
    ):
        from .diffusion import make_noise_schedule

        self.model = model
        self.schedule_params = dict(schedule_params)
        self.schedule = make_noise_schedule(**schedule_params)
        self.rank = rank
        self.train_steps = train_steps
        self.lr = lr
        self.sample_steps = sample_steps
        self.cfg_w = cfg_w
        self.descriptor = f"adapter-r{rank}-t{train_steps}"
        self._cache: dict[str, dict] = {}
        self._lock = threading.Lock()

    def _adapter_for(self, image: torch.Tensor, caption: str) -> dict:
        key = _image_key(image, caption)
        with self._lock:
            if key not in self._cache:
                self._cache[key] = train_image_adapter(
                    self.model,
                    image,
                    caption,
                    self.schedule,
                    self.schedule_params,
                    self.rank,
                    self.train_steps,
                    self.lr,
                    seed=_image_seed(key),
                )
            return self._cache[key]

    def __call__(
        self, content: torch.Tensor, style: torch.Tensor, n: int, seed: int
    ) -> list[torch.Tensor]:
        content_state, _ = split_adapter_state(self._adapter_for(content, CONTENT_PROMPT))
        _, style_state = split_adapter_state(self._adapter_for(style, STYLE_PROMPT))
        combined = copy.deepcopy(self.model)
        adapters = attach_adapters(combined.base, self.rank, seed=0)
        load_adapter_state(adapters, content_state, CONTENT_PREFIX)
        load_adapter_state(adapters, style_state, STYLE_PREFIX)
        combined.eval()
        inj = InjectionConfig.training_defaults(combined.cfg.n_style_tokens)
        conditions = combined.make_conditions(COMBINED_PROMPT, None, None)
        shape = (combined.codec.channels, combined.cfg.latent_size, combined.cfg.latent_size)
        out = []
        for k in range(n):
            latent = sample(
                combined.predictor(inj),
                conditions,
                self.schedule,
                self.cfg_w,
                self.sample_steps,
                seed + k,
                shape,
                dtype=combined.dtype,
            )
            out.append(combined.codec.decode(latent))
        return out
