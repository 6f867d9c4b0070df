"""Procedural capital-A glyphs for desk-scale runs without font files.

Each glyph is a parametric three-stroke "A" (two legs, one crossbar) with
randomized spread, stroke width, bar height, slant and apex offset, drawn
supersampled and pushed through the real cleansing pipeline, so the
resulting 28x28 bitmaps look like the font-derived ones. Everything is
seeded through the package Rng, so a corpus is byte-reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .ingest import (DatasetManifest, ManifestEntry, RawBitmap, cleanse,
                     save_bitmap_png, write_manifest)
from .rng import Rng

_CANVAS = 256
_SUPERSAMPLE = 2


@dataclass
class GlyphParams:
    spread: float        # half-distance between the feet, fraction of canvas
    width: float         # stroke width, fraction of canvas
    bar_height: float    # crossbar position, 0 = apex, 1 = baseline
    slant: float         # horizontal shear per unit height
    apex_dx: float       # apex offset from center, fraction of canvas
    round_joints: bool   # draw discs at the joints (softer, "casual" look)


def random_glyph_params(rng: Rng) -> GlyphParams:
    return GlyphParams(
        spread=0.16 + 0.18 * rng.uniform(),
        width=0.02 + 0.11 * rng.uniform(),
        bar_height=0.45 + 0.30 * rng.uniform(),
        slant=-0.25 + 0.50 * rng.uniform(),
        apex_dx=-0.05 + 0.10 * rng.uniform(),
        round_joints=rng.uniform() < 0.4,
    )


def make_synthetic_glyph(params: GlyphParams, canvas: int = _CANVAS) -> RawBitmap:
    """Draw one anti-aliased black-on-white "A" on a canvas x canvas bitmap."""
    size = canvas * _SUPERSAMPLE
    image = Image.new("L", (size, size), color=255)
    draw = ImageDraw.Draw(image)

    baseline = 0.84 * size
    top = 0.16 * size
    cx = 0.5 * size + params.apex_dx * size

    def shear(x: float, y: float) -> tuple[float, float]:
        return x + params.slant * (baseline - y), y

    apex = shear(cx, top)
    left_foot = shear(cx - params.spread * size, baseline)
    right_foot = shear(cx + params.spread * size, baseline)
    stroke = max(2, int(round(params.width * size)))

    def on_leg(foot: tuple[float, float], frac: float) -> tuple[float, float]:
        return (apex[0] + (foot[0] - apex[0]) * frac,
                apex[1] + (foot[1] - apex[1]) * frac)

    bar_left = on_leg(left_foot, params.bar_height)
    bar_right = on_leg(right_foot, params.bar_height)

    draw.line([apex, left_foot], fill=0, width=stroke)
    draw.line([apex, right_foot], fill=0, width=stroke)
    draw.line([bar_left, bar_right], fill=0, width=stroke)
    if params.round_joints:
        r = stroke / 2.0
        for px, py in (apex, left_foot, right_foot):
            draw.ellipse([px - r, py - r, px + r, py + r], fill=0)

    image = image.resize((canvas, canvas), resample=Image.BILINEAR)
    return RawBitmap(np.asarray(image, dtype=np.uint8))


def make_desk_corpus(out_dir: Path, count: int = 200, seed: int = 7) -> DatasetManifest:
    """Generate a cleansed synthetic dataset shaped exactly like ingest output."""
    rng = Rng(seed)
    out_dir = Path(out_dir)
    (out_dir / "bitmaps").mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(count):
        font_id = f"synth-{seed}-{i:04d}"
        raw28 = cleanse(make_synthetic_glyph(random_glyph_params(rng)))
        rel = f"bitmaps/{font_id}.png"
        save_bitmap_png(raw28, out_dir / rel)
        entries.append(ManifestEntry(font_id=font_id, source_file="synthetic",
                                     status="ok", bitmap_path=rel))
    entries.sort(key=lambda e: e.font_id)
    manifest = DatasetManifest(entries=entries, base_dir=out_dir)
    write_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest
