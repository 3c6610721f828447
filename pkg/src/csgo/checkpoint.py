"""Checkpoint archive: weight tensors plus a JSON header, byte-reproducible.

A checkpoint is a ZIP file with a ``header.json`` entry (format version,
architecture hyperparameters, noise schedule parameters, injection defaults,
and a tensor index) and one raw little-endian entry per weight tensor, keyed
by its hierarchical state_dict name. Entry timestamps are pinned so identical
models produce identical bytes.
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .model import CsgoModel, InjectionConfig, ModelConfig

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _write_entry(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    zf.writestr(info, data)


def save_checkpoint(
    path: str | Path,
    model: CsgoModel,
    schedule_params: dict,
    injection_defaults: InjectionConfig,
    extra: dict | None = None,
) -> None:
    state = model.state_dict()
    index = {}
    header = {
        "version": FORMAT_VERSION,
        "model": asdict(model.cfg),
        "schedule": dict(schedule_params),
        "injection_defaults": asdict(injection_defaults),
        "tensors": index,
    }
    if extra:
        header["extra"] = dict(extra)
    for name, tensor in state.items():
        index[name] = {"dtype": str(tensor.dtype).removeprefix("torch."), "shape": list(tensor.shape)}

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w") as zf:
        _write_entry(zf, "header.json", json.dumps(header, sort_keys=True).encode())
        for name, tensor in state.items():
            _write_entry(zf, f"tensors/{name}", tensor.contiguous().numpy().tobytes())


def read_header(path: str | Path) -> dict:
    with zipfile.ZipFile(path, "r") as zf:
        header = json.loads(zf.read("header.json"))
    if "version" not in header:
        raise ValueError(f"checkpoint {path} has no version field")
    if header["version"] != FORMAT_VERSION:
        raise ValueError(
            f"checkpoint {path} has unsupported version {header['version']} "
            f"(expected {FORMAT_VERSION})"
        )
    return header


def load_checkpoint(path: str | Path) -> tuple[CsgoModel, dict]:
    """Rebuild the model from a checkpoint; returns (model, header)."""
    header = read_header(path)
    cfg_kwargs = dict(header["model"])
    cfg_kwargs["widths"] = tuple(cfg_kwargs["widths"])
    cfg = ModelConfig(**cfg_kwargs)
    model = CsgoModel(cfg)
    state = {}
    with zipfile.ZipFile(path, "r") as zf:
        for name, meta in header["tensors"].items():
            raw = zf.read(f"tensors/{name}")
            arr = np.frombuffer(raw, dtype=np.dtype(meta["dtype"])).reshape(meta["shape"]).copy()
            state[name] = torch.from_numpy(arr)
    model.load_state_dict(state)
    model.eval()
    return model, header


def injection_from_header(header: dict) -> InjectionConfig:
    return InjectionConfig(**header["injection_defaults"])
