"""Triplet construction: candidate generation, score-based cleaning, manifests.

For every (content, style) pair, a generator proposes n candidate stylized
images, the candidate with the lowest content-alignment score is kept, and
the triplet is appended to a JSON Lines manifest. Failed pairs are skipped and
logged, never silently dropped. Pair work items are independent, so the build
parallelizes over pairs; results merge in (content index, style index) order
regardless of worker count.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import torch

from .images import load_image, save_image
from .metrics import CasResult, FeatureExtractor, cas
from .synthetic import corrupt_blocks, synthetic_stylize
from .text import CONTENT_PROMPT

MANIFEST_VERSION = 1


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ImageTriplet:
    content: str
    style: str
    stylized: str
    caption: str
    cas_score: float
    generator_descriptor: str

    def __post_init__(self):
        if not (self.cas_score >= 0):
            raise ValueError(f"cas_score must be >= 0, got {self.cas_score}")


@dataclass(frozen=True)
class DatasetManifest:
    triplets: tuple[ImageTriplet, ...]
    extractor_descriptor: str
    n: int
    seed: int
    version: int = MANIFEST_VERSION

    def __post_init__(self):
        pairs = [(t.content, t.style) for t in self.triplets]
        if len(pairs) != len(set(pairs)):
            raise ValueError("manifest contains duplicate (content, style) pairs")


class SyntheticOracleGenerator:
    """Reference generator: deterministic stylization plus block corruption.

    Candidate i blends the stylized image toward noise by a corruption level;
    levels are either fixed at construction or drawn per call from the seed.
    All candidates of one call share the corruption order, so corruption sets
    are nested across levels.
    """

    def __init__(self, levels: Sequence[float] | None = None):
        self.levels = None if levels is None else tuple(float(v) for v in levels)
        self.descriptor = (
            "synthetic-oracle"
            if self.levels is None
            else "synthetic-oracle-levels[" + ",".join(f"{v:g}" for v in self.levels) + "]"
        )

    def __call__(
        self, content: torch.Tensor, style: torch.Tensor, n: int, seed: int
    ) -> list[torch.Tensor]:
        stylized = synthetic_stylize(content, style)
        if self.levels is not None:
            if len(self.levels) != n:
                raise ValueError(f"generator has {len(self.levels)} fixed levels but n={n}")
            levels = list(self.levels)
        else:
            g = torch.Generator()
            g.manual_seed(seed)
            levels = torch.rand(n, generator=g).tolist()
        return [corrupt_blocks(stylized, lvl, seed) for lvl in levels]


def generate_candidates(
    gen, content: torch.Tensor, style: torch.Tensor, n: int, seed: int
) -> list[torch.Tensor]:
    """Run a candidate generator and enforce its contract."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    candidates = gen(content, style, n, seed)
    if len(candidates) != n:
        raise RuntimeError(f"generator returned {len(candidates)} candidates, expected {n}")
    for i, c in enumerate(candidates):
        if c.shape != content.shape:
            raise RuntimeError(
                f"candidate {i} has shape {tuple(c.shape)}, expected {tuple(content.shape)}"
            )
    return candidates


def select_best(
    extractor: FeatureExtractor, content: torch.Tensor, candidates: Sequence[torch.Tensor]
) -> tuple[int, list[CasResult]]:
    """Index of the lowest-scoring candidate; ties break to the lowest index."""
    if not candidates:
        raise ValueError("candidate list is empty")
    scores = [cas(extractor, content, c) for c in candidates]
    index = min(range(len(scores)), key=lambda i: scores[i].score)
    return index, scores


def _pair_seed(seed: int, ci: int, si: int) -> int:
    return (seed * 1000003 + ci * 10007 + si * 101) % (2**31 - 1)


def build_dataset(
    contents: Sequence[Path],
    styles: Sequence[Path],
    gen,
    extractor: FeatureExtractor,
    n: int,
    seed: int,
    out_dir: str | Path,
    captioner: Callable[[Path], str] | None = None,
    workers: int = 1,
) -> tuple[DatasetManifest, list[dict]]:
    """Iterate the content x style product and keep the best candidate per pair.

    Returns the manifest plus the skip log entries. Stored paths are relative
    to out_dir (where the manifest is written). The kept score is recomputed
    from the saved PNG so the manifest matches a from-file recomputation.
    """
    if not contents or not styles:
        raise ValueError("contents and styles must be nonempty")
    out_dir = Path(out_dir)
    (out_dir / "stylized").mkdir(parents=True, exist_ok=True)
    captioner = captioner or (lambda path: CONTENT_PROMPT)
    content_imgs = [load_image(p) for p in contents]
    style_imgs = [load_image(p) for p in styles]
    pairs = [(ci, si) for ci in range(len(contents)) for si in range(len(styles))]

    def rel(p: Path) -> str:
        return os.path.relpath(os.path.abspath(p), out_dir)

    def work(pair):
        ci, si = pair
        stylized_rel = f"stylized/c{ci:03d}_s{si:03d}.png"
        candidates = generate_candidates(
            gen, content_imgs[ci], style_imgs[si], n, _pair_seed(seed, ci, si)
        )
        best, _ = select_best(extractor, content_imgs[ci], candidates)
        save_image(candidates[best], out_dir / stylized_rel)
        score = cas(extractor, content_imgs[ci], load_image(out_dir / stylized_rel)).score
        return ImageTriplet(
            content=rel(contents[ci]),
            style=rel(styles[si]),
            stylized=stylized_rel,
            caption=captioner(contents[ci]),
            cas_score=score,
            generator_descriptor=getattr(gen, "descriptor", type(gen).__name__),
        )

    results: dict[tuple[int, int], ImageTriplet | Exception] = {}
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pair: pool.submit(work, pair) for pair in pairs}
        for pair, fut in futures.items():
            exc = fut.exception()
            results[pair] = exc if exc is not None else fut.result()
    else:
        for pair in pairs:
            try:
                results[pair] = work(pair)
            except Exception as exc:  # per-pair failure: skip and log
                results[pair] = exc

    triplets, skips = [], []
    for pair in pairs:
        outcome = results[pair]
        if isinstance(outcome, Exception):
            skips.append(
                {
                    "content": rel(contents[pair[0]]),
                    "style": rel(styles[pair[1]]),
                    "reason": str(outcome),
                }
            )
        else:
            triplets.append(outcome)
    manifest = DatasetManifest(
        triplets=tuple(triplets), extractor_descriptor=extractor.descriptor, n=n, seed=seed
    )
    return manifest, skips


ROW_FIELDS = ("content", "style", "stylized", "caption", "cas", "generator")


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        json.dumps(
            {
                "version": manifest.version,
                "extractor": manifest.extractor_descriptor,
                "n": manifest.n,
                "seed": manifest.seed,
            }
        )
    ]
    for t in manifest.triplets:
        lines.append(
            json.dumps(
                {
                    "content": t.content,
                    "style": t.style,
                    "stylized": t.stylized,
                    "caption": t.caption,
                    "cas": t.cas_score,
                    "generator": t.generator_descriptor,
                }
            )
        )
    path.write_text("\n".join(lines) + "\n")


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    text = path.read_text()
    lines = text.splitlines()
    if not lines:
        raise ManifestError(f"{path}: empty manifest file (missing header line)")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path} line 1: invalid header: {e}") from e
    required = {"version", "extractor", "n", "seed"}
    if not isinstance(header, dict) or set(header) != required:
        raise ManifestError(f"{path} line 1: header must have exactly keys {sorted(required)}")
    if header["version"] != MANIFEST_VERSION:
        raise ManifestError(f"{path} line 1: unsupported version {header['version']}")
    triplets = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            raise ManifestError(f"{path} line {i}: blank line")
        try:
            row = json.loads(line)
        except json.JSONDecodeError as e:
            raise ManifestError(f"{path} line {i}: invalid JSON: {e}") from e
        if not isinstance(row, dict) or set(row) != set(ROW_FIELDS):
            raise ManifestError(
                f"{path} line {i}: row must have exactly fields {list(ROW_FIELDS)}"
            )
        try:
            triplets.append(
                ImageTriplet(
                    content=row["content"],
                    style=row["style"],
                    stylized=row["stylized"],
                    caption=row["caption"],
                    cas_score=float(row["cas"]),
                    generator_descriptor=row["generator"],
                )
            )
        except (TypeError, ValueError) as e:
            raise ManifestError(f"{path} line {i}: {e}") from e
    return DatasetManifest(
        triplets=tuple(triplets),
        extractor_descriptor=header["extractor"],
        n=int(header["n"]),
        seed=int(header["seed"]),
        version=int(header["version"]),
    )


def write_skip_log(skips: list[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(s) + "\n" for s in skips))


def verify_manifest(
    manifest: DatasetManifest, root: str | Path, extractor: FeatureExtractor, tol: float = 1e-6
) -> list[tuple[int, float, float]]:
    """Recompute every score from files; returns (index, stored, recomputed)
    for rows outside tolerance."""
    root = Path(root)
    bad = []
    for i, t in enumerate(manifest.triplets):
        recomputed = cas(extractor, load_image(root / t.content), load_image(root / t.stylized)).score
        if abs(recomputed - t.cas_score) > tol:
            bad.append((i, t.cas_score, recomputed))
    return bad
