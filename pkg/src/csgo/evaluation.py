"""Test-set evaluation and ablation sweeps over the injection scalars.

Per item the model stylizes the triplet's content with its style via the
transfer mode, then the output is scored against the content (content
alignment) and against the style image (style statistics distance). Sweeps
rerun the evaluation with one knob varied and everything else frozen, and
emit a CSV table plus a contact-sheet PNG (one row per axis value).
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .diffusion import NoiseSchedule
from .images import load_image
from .inference import GenerationRequest, generate
from .metrics import FeatureExtractor, cas, style_stat_distance
from .model import CsgoModel, InjectionConfig
from .pipeline import DatasetManifest

SWEEP_AXES = ("delta_c", "lambda_c", "lambda_s", "cfg_w", "n_style_tokens")


@dataclass(frozen=True)
class EvalRow:
    item: int
    content: str
    style: str
    cas_score: float
    style_distance: float
    failed: bool = False
    error: str = ""


@dataclass
class EvalReport:
    mean_cas: float
    mean_style_distance: float
    rows: list[EvalRow]
    checkpoint_id: str
    config: dict
    failures: int = 0


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    checkpoints: dict | None = None  # value -> checkpoint path; n_style_tokens only

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ValueError(f"axis must be one of {SWEEP_AXES}, got {self.axis!r}")
        if not self.values:
            raise ValueError("sweep values must be nonempty")
        if self.axis == "n_style_tokens":
            missing = [v for v in self.values if not (self.checkpoints or {}).get(v)]
            if missing:
                raise ValueError(
                    f"n_style_tokens sweep changes the architecture; checkpoints missing for {missing}"
                )


def evaluate(
    model: CsgoModel,
    schedule: NoiseSchedule,
    manifest: DatasetManifest,
    root: str | Path,
    injection: InjectionConfig,
    steps: int,
    seed: int,
    extractor: FeatureExtractor,
    checkpoint_id: str = "",
    generate_fn=None,
    images_out: list | None = None,
) -> EvalReport:
    """Stylize and score every manifest item; failed rows are excluded from
    the means and counted."""
    if not manifest.triplets:
        raise ValueError("manifest contains no triplets")
    generate_fn = generate_fn or generate
    root = Path(root)
    rows = []
    for i, t in enumerate(manifest.triplets):
        content = load_image(root / t.content)
        style = load_image(root / t.style)
        try:
            request = GenerationRequest(
                mode="transfer",
                style_image=style,
                content_image=content,
                prompt=t.caption,
                config=injection,
                seed=seed + i,
                steps=steps,
            )
            output = generate_fn(model, schedule, request)
            rows.append(
                EvalRow(
                    item=i,
                    content=t.content,
                    style=t.style,
                    cas_score=cas(extractor, content, output).score,
                    style_distance=style_stat_distance(style, output, extractor),
                )
            )
            if images_out is not None:
                images_out.append(output)
        except Exception as e:
            rows.append(
                EvalRow(
                    item=i, content=t.content, style=t.style,
                    cas_score=float("nan"), style_distance=float("nan"),
                    failed=True, error=str(e),
                )
            )
            if images_out is not None:
                images_out.append(None)
    ok = [r for r in sorted(rows, key=lambda r: r.item) if not r.failed]
    if not ok:
        raise RuntimeError("every evaluation row failed")
    return EvalReport(
        mean_cas=sum(r.cas_score for r in ok) / len(ok),
        mean_style_distance=sum(r.style_distance for r in ok) / len(ok),
        rows=rows,
        checkpoint_id=checkpoint_id,
        config={"injection": asdict(injection), "steps": steps, "seed": seed,
                "extractor": extractor.descriptor},
        failures=len(rows) - len(ok),
    )


def write_report(report: EvalReport, out_dir: str | Path, name: str = "report") -> tuple[Path, Path]:
    """Full report as JSON plus a per-row CSV; returns both paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"{name}.json"
    payload = {
        "mean_cas": report.mean_cas,
        "mean_style_distance": report.mean_style_distance,
        "failures": report.failures,
        "checkpoint": report.checkpoint_id,
        "config": report.config,
        "rows": [asdict(r) for r in report.rows],
    }
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    csv_path = out_dir / f"{name}.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["item", "content", "style", "cas", "style_distance", "failed"])
        for r in sorted(report.rows, key=lambda r: r.item):
            writer.writerow([r.item, r.content, r.style, repr(r.cas_score),
                             repr(r.style_distance), int(r.failed)])
    return json_path, csv_path


@dataclass
class SweepEntry:
    value: object
    report: EvalReport | None
    error: str = ""
    images: list = field(default_factory=list)


def ablation_sweep(
    model: CsgoModel,
    schedule: NoiseSchedule,
    spec: SweepSpec,
    manifest: DatasetManifest,
    root: str | Path,
    base_injection: InjectionConfig,
    steps: int,
    seed: int,
    extractor: FeatureExtractor,
    out_dir: str | Path | None = None,
    checkpoint_id: str = "",
    model_loader=None,
) -> list[SweepEntry]:
    """One evaluation per axis value with all other knobs frozen.

    Per-value failures are recorded and the sweep continues. When out_dir is
    set, writes sweep_<axis>.csv, grid_<axis>.png, and one report per value.
    """
    entries = []
    for value in spec.values:
        eval_model, eval_schedule, ckpt_id = model, schedule, checkpoint_id
        try:
            if spec.axis == "n_style_tokens":
                if model_loader is None:
                    raise ValueError("n_style_tokens sweep requires a model loader")
                eval_model, header = model_loader(spec.checkpoints[value])
                from .diffusion import make_noise_schedule

                eval_schedule = make_noise_schedule(**header["schedule"])
                ckpt_id = str(spec.checkpoints[value])
                inj = replace(base_injection, n_style_tokens=int(value))
            else:
                inj = replace(base_injection, **{spec.axis: float(value)})
            images: list = []
            report = evaluate(
                eval_model, eval_schedule, manifest, root, inj, steps, seed,
                extractor, checkpoint_id=ckpt_id, images_out=images,
            )
            entries.append(SweepEntry(value=value, report=report, images=images))
        except Exception as e:
            entries.append(SweepEntry(value=value, report=None, error=str(e)))
    if out_dir is not None:
        _write_sweep(entries, spec.axis, Path(out_dir))
    return entries


def _write_sweep(entries: list[SweepEntry], axis: str, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"sweep_{axis}.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([axis, "mean_cas", "mean_style_distance", "failures", "error"])
        for e in entries:
            if e.report is None:
                writer.writerow([e.value, "", "", "", e.error])
            else:
                writer.writerow(
                    [e.value, repr(e.report.mean_cas), repr(e.report.mean_style_distance),
                     e.report.failures, ""]
                )
    for e in entries:
        if e.report is not None:
            write_report(e.report, out_dir, name=f"report_{axis}_{e.value:g}"
                         if isinstance(e.value, float) else f"report_{axis}_{e.value}")
    grid = _contact_sheet(entries)
    if grid is not None:
        grid.save(out_dir / f"grid_{axis}.png", format="PNG")


def _contact_sheet(entries: list[SweepEntry]) -> Image.Image | None:
    """Rows = axis values, columns = test items; failed cells stay gray."""
    sized = [img for e in entries for img in e.images if img is not None]
    if not sized:
        return None
    h, w = sized[0].shape[-2:]
    cols = max((len(e.images) for e in entries), default=0)
    if cols == 0:
        return None
    sheet = Image.new("RGB", (cols * w, len(entries) * h), color=(128, 128, 128))
    for ri, e in enumerate(entries):
        for ci, img in enumerate(e.images):
            if img is None:
                continue
            arr = (img.detach().clamp(0, 1) * 255).round().byte().permute(1, 2, 0).numpy()
            sheet.paste(Image.fromarray(np.ascontiguousarray(arr), mode="RGB"), (ci * w, ri * h))
    return sheet
