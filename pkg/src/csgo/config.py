"""Declarative run configuration: TOML sections mirroring the module configs.

Unknown keys are rejected; defaults are filled in and the resolved
configuration (file values + flag overrides + defaults) is echoed back as
TOML next to every command's outputs.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class ScheduleSection:
    num_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    kind: str = "linear"

    def params(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class InferenceSection:
    steps: int = 50
    delta_c: float = 0.5
    lambda_c: float = 1.0
    lambda_s: float = 1.0
    cfg_w: float = 7.5


@dataclass
class PipelineSection:
    generator: str = "synthetic"
    n: int = 4
    workers: int = 1
    adapter_rank: int = 64
    adapter_steps: int = 1000
    adapter_lr: float = 1e-3
    adapter_sample_steps: int = 20


@dataclass
class EvalSection:
    steps: int = 20


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    inference: InferenceSection = field(default_factory=InferenceSection)
    pipeline: PipelineSection = field(default_factory=PipelineSection)
    eval: EvalSection = field(default_factory=EvalSection)
    seed: int = 0
    out_dir: str = "runs"


SECTIONS = {
    "model": ModelConfig,
    "schedule": ScheduleSection,
    "train": TrainConfig,
    "inference": InferenceSection,
    "pipeline": PipelineSection,
    "eval": EvalSection,
}


def _coerce(value, typ, where: str):
    origin = typing.get_origin(typ)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected an array, got {value!r}")
        args = typing.get_args(typ)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], where) for v in value)
        if len(args) != len(value):
            raise ConfigError(f"{where}: expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(v, a, where) for v, a in zip(value, args))
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if typ is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if typ is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    return value


def _build_section(cls, data: dict, section: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    kwargs = {k: _coerce(v, hints[k], f"{section}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ValueError as e:
        raise ConfigError(f"invalid [{section}] values: {e}") from e


def load_run_config(path: str | Path | None) -> tuple[RunConfig, dict]:
    """Parse a TOML config file; returns (config, raw dict) so callers can
    tell which keys the file actually set."""
    if path is None:
        return RunConfig(), {}
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = tomli.loads(path.read_text())
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    allowed = set(SECTIONS) | {"seed", "out_dir"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    kwargs = {}
    for name, cls in SECTIONS.items():
        section_data = raw.get(name, {})
        if not isinstance(section_data, dict):
            raise ConfigError(f"[{name}] must be a section")
        kwargs[name] = _build_section(cls, section_data, name)
    if "seed" in raw:
        kwargs["seed"] = _coerce(raw["seed"], int, "seed")
    if "out_dir" in raw:
        kwargs["out_dir"] = _coerce(raw["out_dir"], str, "out_dir")
    return RunConfig(**kwargs), raw


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize {value!r} to TOML")


def dump_toml(config: RunConfig) -> str:
    lines = [f"seed = {_fmt(config.seed)}", f"out_dir = {_fmt(config.out_dir)}"]
    for name in SECTIONS:
        section = getattr(config, name)
        lines.append("")
        lines.append(f"[{name}]")
        for f in dataclasses.fields(section):
            lines.append(f"{f.name} = {_fmt(getattr(section, f.name))}")
    return "\n".join(lines) + "\n"


def write_resolved(config: RunConfig, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_toml(config))
