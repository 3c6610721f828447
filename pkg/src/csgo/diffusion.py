"""Diffusion primitives: noise schedules, forward noising, CFG, DDIM sampling.

Forward process (closed form):   z_t = sqrt(a_bar_t) * x0 + sqrt(1 - a_bar_t) * eps
Guided prediction:               eps_hat = w * eps_cond + (1 - w) * eps_uncond
Reverse update (DDIM, eta = 0):  x0_hat = (z - sqrt(1 - a_bar_t) * eps_hat) / sqrt(a_bar_t)
                                 z' = sqrt(a_bar_prev) * x0_hat + sqrt(1 - a_bar_prev) * eps_hat
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import torch


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep cumulative signal fraction a_bar, indexed 0 .. num_steps-1."""

    num_steps: int
    alpha_bar: torch.Tensor  # (num_steps,) float64

    def __post_init__(self):
        if self.num_steps < 1:
            raise ValueError(f"num_steps must be >= 1, got {self.num_steps}")
        if self.alpha_bar.shape != (self.num_steps,):
            raise ValueError(
                f"alpha_bar must have shape ({self.num_steps},), got {tuple(self.alpha_bar.shape)}"
            )
        ab = self.alpha_bar
        if not bool(((ab > 0) & (ab <= 1)).all()):
            raise ValueError("alpha_bar entries must lie strictly in (0, 1]")
        if self.num_steps > 1:
            if not bool((ab[1:] <= ab[:-1]).all()):
                raise ValueError("alpha_bar must be non-increasing")
            if not bool(ab[0] > ab[-1]):
                raise ValueError("alpha_bar must decay from first to last entry")


@dataclass(frozen=True)
class LatentState:
    """A latent tensor together with its diffusion timestep."""

    z: torch.Tensor
    t: int

    def __post_init__(self):
        if not bool(torch.isfinite(self.z).all()):
            raise ValueError("latent contains NaN or Inf")


@dataclass(frozen=True)
class NoisePrediction:
    """Predicted noise, same shape as the latent it was predicted for."""

    eps_hat: torch.Tensor

    def __post_init__(self):
        if not bool(torch.isfinite(self.eps_hat).all()):
            raise ValueError("noise prediction contains NaN or Inf")


def make_noise_schedule(
    num_steps: int,
    beta_start: float,
    beta_end: float,
    kind: str = "linear",
) -> NoiseSchedule:
    """Build a schedule from per-step noise rates beta_t.

    linear: beta_t spaced evenly in [beta_start, beta_end], a_bar = cumprod(1 - beta_t).
    cosine: a_bar_t = f(t)/f(0) with f(t) = cos((t/T + s)/(1 + s) * pi/2)^2, s = 0.008;
            beta_start/beta_end are validated but do not enter the formula.
    """
    if num_steps < 1:
        raise ValueError(f"num_steps must be >= 1, got {num_steps}")
    for name, b in (("beta_start", beta_start), ("beta_end", beta_end)):
        if not (0.0 < b < 1.0):
            raise ValueError(f"{name} must lie in (0, 1), got {b}")
    if beta_start > beta_end:
        raise ValueError(f"beta_start ({beta_start}) must not exceed beta_end ({beta_end})")

    if kind == "linear":
        betas = torch.linspace(beta_start, beta_end, num_steps, dtype=torch.float64)
        alpha_bar = torch.cumprod(1.0 - betas, dim=0)
    elif kind == "cosine":
        s = 0.008

        def f(u: float) -> float:
            return math.cos((u + s) / (1.0 + s) * math.pi / 2.0) ** 2

        vals = [f((i + 1) / num_steps) / f(0.0) for i in range(num_steps)]
        alpha_bar = torch.tensor(vals, dtype=torch.float64).clamp(min=1e-9)
    else:
        raise ValueError(f"unknown schedule kind {kind!r} (expected 'linear' or 'cosine')")
    return NoiseSchedule(num_steps=num_steps, alpha_bar=alpha_bar)


def noise_mix(alpha_bar_t: float, x0: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
    """sqrt(a_bar) * x0 + sqrt(1 - a_bar) * noise, elementwise."""
    if noise.shape != x0.shape:
        raise ValueError(f"noise shape {tuple(noise.shape)} != x0 shape {tuple(x0.shape)}")
    return math.sqrt(alpha_bar_t) * x0 + math.sqrt(1.0 - alpha_bar_t) * noise


def forward_noise(
    schedule: NoiseSchedule,
    x0: torch.Tensor,
    t: int,
    noise: torch.Tensor,
) -> LatentState:
    """Diffuse a clean latent to timestep t using the given noise draw."""
    if not (0 <= t < schedule.num_steps):
        raise ValueError(f"t={t} out of range [0, {schedule.num_steps})")
    z = noise_mix(float(schedule.alpha_bar[t]), x0, noise)
    return LatentState(z=z, t=t)


def cfg_combine(
    eps_cond: NoisePrediction,
    eps_uncond: NoisePrediction,
    w: float,
) -> NoisePrediction:
    """Blend conditional and unconditional predictions with guidance weight w."""
    c, u = eps_cond.eps_hat, eps_uncond.eps_hat
    if c.shape != u.shape:
        raise ValueError(f"prediction shapes differ: {tuple(c.shape)} vs {tuple(u.shape)}")
    # Early exits keep the w in {0, 1} identities exact in floating point; the
    # rearranged form below makes the equal-branch collapse exact for any w.
    if w == 1.0:
        return eps_cond
    if w == 0.0:
        return eps_uncond
    return NoisePrediction(u + w * (c - u))


def sample(
    model: Callable,
    conditions,
    schedule: NoiseSchedule,
    w: float,
    num_inference_steps: int,
    seed: int,
    shape: Sequence[int],
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Deterministic DDIM sampling with classifier-free guidance.

    `model(z, t, conditions)` must return a NoisePrediction; `conditions` must
    provide `.nulled()` for the unconditional branch. Every step makes exactly
    two model calls. Pure in (model, conditions, schedule, w, steps, seed).
    """
    if num_inference_steps < 1:
        raise ValueError(f"num_inference_steps must be >= 1, got {num_inference_steps}")
    if num_inference_steps > schedule.num_steps:
        raise ValueError(
            f"num_inference_steps ({num_inference_steps}) exceeds schedule steps ({schedule.num_steps})"
        )

    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(tuple(shape), generator=gen, dtype=dtype)
    timesteps = (
        torch.linspace(schedule.num_steps - 1, 0, num_inference_steps).round().long().tolist()
    )
    null = conditions.nulled()

    for i, t in enumerate(timesteps):
        ab_t = float(schedule.alpha_bar[t])
        ab_prev = float(schedule.alpha_bar[timesteps[i + 1]]) if i + 1 < len(timesteps) else 1.0
        eps_cond = model(z, t, conditions)
        eps_uncond = model(z, t, null)
        eps = cfg_combine(eps_cond, eps_uncond, w).eps_hat
        if eps.shape != z.shape:
            raise ValueError(f"model output shape {tuple(eps.shape)} != latent {tuple(z.shape)}")
        x0_hat = (z - math.sqrt(1.0 - ab_t) * eps) / math.sqrt(ab_t)
        z = math.sqrt(ab_prev) * x0_hat + math.sqrt(1.0 - ab_prev) * eps
    return z
