"""Triplet training loop: noise-prediction objective with condition dropout.

The noised latent is always built from the target (stylized) image; content
and style enter only as conditions. Each of the three condition streams is
independently dropped per sample with its configured rate so classifier-free
guidance works at inference time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import torch
import torch.nn.functional as F

from .diffusion import NoiseSchedule, make_noise_schedule
from .model import CsgoModel, InjectionConfig
from .pipeline import read_manifest
from .images import load_image
from .checkpoint import save_checkpoint


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    drop_rate_text: float = 0.15
    drop_rate_content: float = 0.15
    drop_rate_style: float = 0.15
    learning_rate: float = 1e-4
    steps: int = 1000
    seed: int = 0
    batch_size: int = 4
    checkpoint_interval: int = 0  # 0 = final checkpoint only
    delta_c: float = 1.0
    lambda_c: float = 1.0
    lambda_s: float = 1.0
    freeze: tuple[str, ...] = ()
    divergence_threshold: float = 1e4
    log_every: int = 100

    def __post_init__(self):
        for name in ("drop_rate_text", "drop_rate_content", "drop_rate_style"):
            r = getattr(self, name)
            if not (0.0 <= r <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def injection(self, n_style_tokens: int) -> InjectionConfig:
        return InjectionConfig(
            delta_c=self.delta_c,
            lambda_c=self.lambda_c,
            lambda_s=self.lambda_s,
            cfg_w=1.0,
            n_style_tokens=n_style_tokens,
        )


@dataclass
class TrainingBatch:
    content_images: torch.Tensor
    style_images: torch.Tensor
    target_images: torch.Tensor
    captions: torch.Tensor  # (B, L) token ids
    drop_text: torch.Tensor = None
    drop_content: torch.Tensor = None
    drop_style: torch.Tensor = None

    def __post_init__(self):
        b = self.target_images.shape[0]
        for name in ("content_images", "style_images", "captions"):
            if getattr(self, name).shape[0] != b:
                raise ValueError(f"{name} length != batch length {b}")
        if not bool(torch.isfinite(self.target_images).all()):
            raise ValueError("target images contain NaN or Inf")
        for name in ("drop_text", "drop_content", "drop_style"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, torch.zeros(b, dtype=torch.bool))

    def __len__(self) -> int:
        return self.target_images.shape[0]


class TripletDataset:
    """Triplets loaded into memory as stacked tensors."""

    def __init__(self, content, style, target, captions):
        self.content = content
        self.style = style
        self.target = target
        self.captions = captions

    def __len__(self):
        return self.content.shape[0]

    @classmethod
    def from_manifest(cls, manifest_path: str | Path, tokenizer) -> "TripletDataset":
        manifest_path = Path(manifest_path)
        manifest = read_manifest(manifest_path)
        if not manifest.triplets:
            raise ValueError(f"manifest {manifest_path} contains no triplets")
        root = manifest_path.parent
        content, style, target, caps = [], [], [], []
        for t in manifest.triplets:
            content.append(load_image(root / t.content))
            style.append(load_image(root / t.style))
            target.append(load_image(root / t.stylized))
            caps.append(tokenizer.encode(t.caption))
        return cls(
            torch.stack(content), torch.stack(style), torch.stack(target), torch.stack(caps)
        )

    def batch(self, idx: torch.Tensor) -> TrainingBatch:
        return TrainingBatch(
            content_images=self.content[idx],
            style_images=self.style[idx],
            target_images=self.target[idx],
            captions=self.captions[idx],
        )


def drop_conditions(
    batch: TrainingBatch, config: TrainConfig, rng: torch.Generator
) -> TrainingBatch:
    """Draw independent per-sample drop masks for the three streams.

    The replacement by null tokens happens when the batch is fed to the model;
    here the masks are recorded on the batch. Draw order is text, content,
    style, one uniform vector each.
    """
    b = len(batch)
    masks = {}
    for name, rate in (
        ("drop_text", config.drop_rate_text),
        ("drop_content", config.drop_rate_content),
        ("drop_style", config.drop_rate_style),
    ):
        masks[name] = torch.rand(b, generator=rng) < rate
    return replace(batch, **masks)


def diffusion_loss(
    model,
    batch: TrainingBatch,
    schedule: NoiseSchedule,
    rng: torch.Generator,
    injection: InjectionConfig | None = None,
    debug: dict | None = None,
) -> torch.Tensor:
    """Mean squared error between drawn noise and the model's prediction.

    Per sample: t ~ U[0, num_steps), eps ~ N(0, I); the latent is the noised
    encoding of the *target* image.
    """
    if len(batch) == 0:
        raise ValueError("batch is empty")
    if injection is None:
        injection = InjectionConfig.training_defaults(model.cfg.n_style_tokens)
    b = len(batch)
    x0 = model.codec.encode(batch.target_images.to(model.dtype))
    t = torch.randint(0, schedule.num_steps, (b,), generator=rng)
    eps = torch.randn(x0.shape, generator=rng, dtype=x0.dtype)
    ab = schedule.alpha_bar[t].to(x0.dtype).view(b, 1, 1, 1)
    z_t = ab.sqrt() * x0 + (1.0 - ab).sqrt() * eps
    pred = model.conditioned_eps(
        z_t,
        t,
        batch.captions,
        batch.content_images,
        batch.style_images,
        keep_text=~batch.drop_text,
        keep_content=~batch.drop_content,
        keep_style=~batch.drop_style,
        inj=injection,
    )
    loss = F.mse_loss(pred, eps)
    if debug is not None:
        debug.update(t=t, eps=eps, z_t=z_t, x0=x0)
    if not bool(torch.isfinite(loss)):
        raise TrainingDiverged(
            f"non-finite loss (t={t.tolist()}, |z_t| max={z_t.abs().max().item():.3g})"
        )
    return loss


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    checkpoint_path: Path | None = None
    csv_path: Path | None = None


def smoothed_endpoints(history: list, window: int = 50) -> tuple[float, float]:
    """Mean loss over the first and last `window` steps."""
    if not history:
        raise ValueError("empty history")
    w = min(window, len(history))
    initial = sum(history[:w]) / w
    final = sum(history[-w:]) / w
    return initial, final


def train(
    model: CsgoModel,
    dataset: TripletDataset,
    config: TrainConfig,
    schedule_params: dict,
    out_path: str | Path | None = None,
    verbose: bool = False,
) -> TrainResult:
    """Run the training loop; deterministic given config.seed.

    RNG consumption per step: batch indices, three drop masks, timesteps,
    noise. Saves a checkpoint at the end (and every checkpoint_interval steps)
    when out_path is given, plus a (step, loss) CSV next to it.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    schedule = make_noise_schedule(**schedule_params)
    injection = config.injection(model.cfg.n_style_tokens)
    for name, p in model.named_parameters():
        if any(name.startswith(prefix) for prefix in config.freeze):
            p.requires_grad_(False)
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=config.learning_rate)
    rng = torch.Generator().manual_seed(config.seed)
    result = TrainResult()
    inference_defaults = InjectionConfig(n_style_tokens=model.cfg.n_style_tokens)

    def save(path):
        save_checkpoint(path, model, schedule_params, inference_defaults)

    model.train()
    for step in range(config.steps):
        idx = torch.randint(0, len(dataset), (config.batch_size,), generator=rng)
        batch = drop_conditions(dataset.batch(idx), config, rng)
        loss = diffusion_loss(model, batch, schedule, rng, injection)
        loss_value = float(loss.detach())
        if loss_value > config.divergence_threshold:
            raise TrainingDiverged(f"loss {loss_value:.3g} exceeded divergence threshold at step {step}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        result.history.append(loss_value)
        if verbose and (step % config.log_every == 0 or step == config.steps - 1):
            print(f"step {step} loss {loss_value:.4f}")
        if (
            out_path is not None
            and config.checkpoint_interval > 0
            and (step + 1) % config.checkpoint_interval == 0
            and step + 1 < config.steps
        ):
            p = Path(out_path)
            save(p.with_name(f"{p.stem}.step{step + 1}{p.suffix}"))
    model.eval()

    if out_path is not None:
        out_path = Path(out_path)
        save(out_path)
        result.checkpoint_path = out_path
        csv_path = out_path.with_suffix(".loss.csv")
        with open(csv_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["step", "loss"])
            for i, v in enumerate(result.history):
                writer.writerow([i, repr(v)])
        result.csv_path = csv_path
    return result
