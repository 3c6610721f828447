"""Desk-scale content-style decoupled style transfer.

Subpackages cover the full loop: triplet dataset construction with automatic
score-based cleaning, diffusion training with per-stream condition dropout,
guided sampling in three generation modes, and an evaluation/ablation harness.
"""

from .diffusion import (
    LatentState,
    NoisePrediction,
    NoiseSchedule,
    cfg_combine,
    forward_noise,
    make_noise_schedule,
    sample,
)
from .metrics import CasResult, FeatureExtractor, ada_normalize, cas, style_stat_distance
from .model import (
    ConditionSet,
    CsgoModel,
    InjectionConfig,
    ModelConfig,
    build_model,
    csgo_predict,
)

__version__ = "0.1.0"

__all__ = [
    "CasResult",
    "ConditionSet",
    "CsgoModel",
    "FeatureExtractor",
    "InjectionConfig",
    "LatentState",
    "ModelConfig",
    "NoisePrediction",
    "NoiseSchedule",
    "__version__",
    "ada_normalize",
    "build_model",
    "cas",
    "cfg_combine",
    "csgo_predict",
    "forward_noise",
    "make_noise_schedule",
    "sample",
    "style_stat_distance",
]
