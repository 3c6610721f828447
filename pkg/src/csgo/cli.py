"""Command-line entry points: dataset construction, training, generation,
evaluation, and ablation sweeps, driven by a TOML config file.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error. Flag values
override config-file values; the fully resolved configuration is written
beside every command's outputs. Seed precedence: --seed flag, config file,
CSGO_SEED environment variable, 0.
"""

from __future__ import annotations

import dataclasses
import functools
import os
from dataclasses import replace
from pathlib import Path

import click

from .checkpoint import load_checkpoint
from .config import ConfigError, RunConfig, load_run_config, write_resolved
from .diffusion import make_noise_schedule
from .evaluation import SWEEP_AXES, SweepSpec, ablation_sweep, evaluate, write_report
from .images import load_image, save_image
from .inference import GenerationRequest, generate
from .metrics import conv_extractor
from .model import InjectionConfig, build_model
from .pipeline import (
    ManifestError,
    SyntheticOracleGenerator,
    build_dataset,
    read_manifest,
    write_manifest,
    write_skip_log,
)
from .training import TripletDataset, train

MODE_MAP = {"transfer": "transfer", "text": "text_driven", "edit": "text_edit"}


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except (ConfigError, ManifestError, FileNotFoundError, ValueError) as e:
            raise click.UsageError(str(e))
        except Exception as e:
            raise click.ClickException(str(e))

    return wrapper


def _load(config_path, seed_flag):
    cfg, raw = load_run_config(config_path)
    if seed_flag is not None:
        seed = seed_flag
    elif "seed" in raw:
        seed = cfg.seed
    elif os.environ.get("CSGO_SEED"):
        try:
            seed = int(os.environ["CSGO_SEED"])
        except ValueError:
            raise ConfigError(f"CSGO_SEED must be an integer, got {os.environ['CSGO_SEED']!r}")
    else:
        seed = cfg.seed
    return replace(cfg, seed=seed), raw


def _require_dir(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise click.UsageError(f"{what} directory does not exist: {p}")
    return p


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise click.UsageError(f"{what} file does not exist: {p}")
    return p


def _resolved_path(out: Path) -> Path:
    return out / "resolved.toml" if out.is_dir() else Path(f"{out}.resolved.toml")


_config_opt = click.option("--config", "config_path", default=None, help="TOML config file.")
_seed_opt = click.option("--seed", "seed_flag", type=int, default=None, help="Seed override.")


@click.group()
def main():
    """Content-style decoupled style transfer, desk scale."""


@main.command("build-dataset")
@_config_opt
@_seed_opt
@click.option("--contents", "contents_dir", required=True, help="Directory of content PNGs.")
@click.option("--styles", "styles_dir", required=True, help="Directory of style PNGs.")
@click.option("--out", "out_path", required=True, help="Manifest output path (JSONL).")
@click.option("--generator", "generator_name", type=click.Choice(["synthetic", "adapter"]), default=None)
@click.option("--n", "n_override", type=int, default=None, help="Candidates per pair.")
@click.option("--workers", "workers_override", type=int, default=None)
@_guard
def cmd_build_dataset(config_path, seed_flag, contents_dir, styles_dir, out_path,
                      generator_name, n_override, workers_override):
    """Construct (content, style, stylized) triplets with score-based cleaning."""
    cfg, _ = _load(config_path, seed_flag)
    contents = _require_dir(contents_dir, "contents")
    styles = _require_dir(styles_dir, "styles")
    content_paths = sorted(p for p in contents.iterdir() if p.suffix.lower() == ".png")
    style_paths = sorted(p for p in styles.iterdir() if p.suffix.lower() == ".png")
    if not content_paths:
        raise click.UsageError(f"no PNG images in contents directory {contents}")
    if not style_paths:
        raise click.UsageError(f"no PNG images in styles directory {styles}")

    pipe = replace(
        cfg.pipeline,
        generator=generator_name or cfg.pipeline.generator,
        n=n_override if n_override is not None else cfg.pipeline.n,
        workers=workers_override if workers_override is not None else cfg.pipeline.workers,
    )
    cfg = replace(cfg, pipeline=pipe)
    extractor = conv_extractor()
    if pipe.generator == "synthetic":
        gen = SyntheticOracleGenerator()
    else:
        from .adapters import AdapterCandidateGenerator

        gen = AdapterCandidateGenerator(
            build_model(cfg.model, cfg.seed),
            cfg.schedule.params(),
            rank=pipe.adapter_rank,
            train_steps=pipe.adapter_steps,
            lr=pipe.adapter_lr,
            sample_steps=pipe.adapter_sample_steps,
        )
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest, skips = build_dataset(
        content_paths, style_paths, gen, extractor, pipe.n, cfg.seed, out.parent,
        workers=pipe.workers,
    )
    write_manifest(manifest, out)
    write_skip_log(skips, out.parent / "skips.jsonl")
    write_resolved(cfg, _resolved_path(out))
    click.echo(f"wrote {len(manifest.triplets)} triplets ({len(skips)} skipped) to {out}")


@main.command("train")
@_config_opt
@_seed_opt
@click.option("--manifest", "manifest_path", required=True)
@click.option("--out", "out_path", required=True, help="Checkpoint output path.")
@_guard
def cmd_train(config_path, seed_flag, manifest_path, out_path):
    """Train on a triplet manifest; writes a checkpoint and a loss CSV."""
    cfg, raw = _load(config_path, seed_flag)
    manifest_file = _require_file(manifest_path, "manifest")
    model = build_model(cfg.model, cfg.seed)
    dataset = TripletDataset.from_manifest(manifest_file, model.tokenizer)
    train_cfg = cfg.train
    if "seed" not in raw.get("train", {}):
        train_cfg = replace(train_cfg, seed=cfg.seed)
    cfg = replace(cfg, train=train_cfg)
    result = train(model, dataset, train_cfg, cfg.schedule.params(), out_path, verbose=True)
    write_resolved(cfg, _resolved_path(Path(out_path)))
    if result.history:
        click.echo(f"final loss {result.history[-1]:.4f} after {len(result.history)} steps")
    click.echo(f"checkpoint written to {result.checkpoint_path}")


@main.command("generate")
@_config_opt
@_seed_opt
@click.option("--mode", required=True, type=click.Choice(sorted(MODE_MAP)))
@click.option("--ckpt", "ckpt_path", required=True)
@click.option("--style", "style_path", required=True)
@click.option("--content", "content_path", default=None)
@click.option("--prompt", default=None)
@click.option("--steps", "steps_override", type=int, default=None)
@click.option("--out", "out_path", required=True, help="Output PNG path.")
@_guard
def cmd_generate(config_path, seed_flag, mode, ckpt_path, style_path, content_path,
                 prompt, steps_override, out_path):
    """Stylize: image-driven transfer, text-driven synthesis, or text edit."""
    cfg, _ = _load(config_path, seed_flag)
    mode_full = MODE_MAP[mode]
    if mode_full == "text_driven" and content_path is not None:
        raise click.UsageError("--content is not allowed with --mode text")
    if mode_full in ("transfer", "text_edit") and content_path is None:
        raise click.UsageError(f"--mode {mode} requires --content")
    ckpt = _require_file(ckpt_path, "checkpoint")
    style = load_image(_require_file(style_path, "style image"))
    content = load_image(_require_file(content_path, "content image")) if content_path else None

    model, header = load_checkpoint(ckpt)
    schedule = make_noise_schedule(**header["schedule"])
    inf = cfg.inference
    steps = steps_override if steps_override is not None else inf.steps
    cfg = replace(cfg, inference=replace(inf, steps=steps))
    injection = InjectionConfig(
        delta_c=inf.delta_c, lambda_c=inf.lambda_c, lambda_s=inf.lambda_s,
        cfg_w=inf.cfg_w, n_style_tokens=model.cfg.n_style_tokens,
    )
    request = GenerationRequest(
        mode=mode_full, style_image=style, content_image=content,
        prompt=prompt if prompt is not None else "a [vcp]",
        config=injection, seed=cfg.seed, steps=steps,
    )
    image = generate(model, schedule, request)
    save_image(image, out_path)
    write_resolved(cfg, _resolved_path(Path(out_path)))
    click.echo(f"wrote {out_path}")


def _eval_setup(cfg, ckpt_path, manifest_path):
    ckpt = _require_file(ckpt_path, "checkpoint")
    manifest_file = _require_file(manifest_path, "manifest")
    manifest = read_manifest(manifest_file)
    if not manifest.triplets:
        raise click.UsageError(f"manifest {manifest_file} is empty")
    model, header = load_checkpoint(ckpt)
    schedule = make_noise_schedule(**header["schedule"])
    injection = InjectionConfig(
        delta_c=cfg.inference.delta_c, lambda_c=cfg.inference.lambda_c,
        lambda_s=cfg.inference.lambda_s, cfg_w=cfg.inference.cfg_w,
        n_style_tokens=model.cfg.n_style_tokens,
    )
    return ckpt, manifest_file, manifest, model, schedule, injection


@main.command("evaluate")
@_config_opt
@_seed_opt
@click.option("--ckpt", "ckpt_path", required=True)
@click.option("--manifest", "manifest_path", required=True)
@click.option("--out", "out_dir", required=True, help="Report output directory.")
@_guard
def cmd_evaluate(config_path, seed_flag, ckpt_path, manifest_path, out_dir):
    """Mean content-alignment and style-statistics scores over a manifest."""
    cfg, _ = _load(config_path, seed_flag)
    ckpt, manifest_file, manifest, model, schedule, injection = _eval_setup(
        cfg, ckpt_path, manifest_path
    )
    report = evaluate(
        model, schedule, manifest, manifest_file.parent, injection,
        cfg.eval.steps, cfg.seed, conv_extractor(), checkpoint_id=str(ckpt),
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, out)
    write_resolved(cfg, _resolved_path(out))
    click.echo(
        f"mean_cas {report.mean_cas:.6g}  mean_style_distance {report.mean_style_distance:.6g}"
        f"  failures {report.failures}"
    )


@main.command("ablate")
@_config_opt
@_seed_opt
@click.option("--ckpt", "ckpt_path", required=True)
@click.option("--manifest", "manifest_path", required=True)
@click.option("--axis", required=True, type=click.Choice(SWEEP_AXES))
@click.option("--values", "values_csv", required=True, help="Comma-separated axis values.")
@click.option("--ckpt-for", "ckpt_for", multiple=True,
              help="VALUE=PATH checkpoint per value (n_style_tokens axis).")
@click.option("--out", "out_dir", required=True)
@_guard
def cmd_ablate(config_path, seed_flag, ckpt_path, manifest_path, axis, values_csv,
               ckpt_for, out_dir):
    """Sweep one injection knob, freezing the rest; writes CSV + image grid."""
    cfg, _ = _load(config_path, seed_flag)
    ckpt, manifest_file, manifest, model, schedule, injection = _eval_setup(
        cfg, ckpt_path, manifest_path
    )
    parse = int if axis == "n_style_tokens" else float
    try:
        values = tuple(parse(v.strip()) for v in values_csv.split(","))
    except ValueError:
        raise click.UsageError(f"--values must be comma-separated {parse.__name__}s: {values_csv!r}")
    checkpoints = {}
    for item in ckpt_for:
        key, _, path = item.partition("=")
        if not path:
            raise click.UsageError(f"--ckpt-for must be VALUE=PATH, got {item!r}")
        checkpoints[parse(key)] = path
    spec = SweepSpec(axis=axis, values=values, checkpoints=checkpoints or None)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = ablation_sweep(
        model, schedule, spec, manifest, manifest_file.parent, injection,
        cfg.eval.steps, cfg.seed, conv_extractor(), out_dir=out,
        checkpoint_id=str(ckpt), model_loader=load_checkpoint,
    )
    write_resolved(cfg, _resolved_path(out))
    for e in entries:
        if e.report is None:
            click.echo(f"{axis}={e.value}: FAILED ({e.error})")
        else:
            click.echo(
                f"{axis}={e.value}: mean_cas {e.report.mean_cas:.6g} "
                f"mean_style_distance {e.report.mean_style_distance:.6g}"
            )


if __name__ == "__main__":
    main()
