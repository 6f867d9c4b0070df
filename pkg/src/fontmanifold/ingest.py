"""Font ingestion: rasterize one glyph per font and cleanse it to 28x28.

Pipeline per font file: rasterize the requested codepoint (capital "A" by
default) onto a 256x256 white canvas, crop to the ink bounding box, pad the
rectangle back to a square with alternating white rows/columns, scale to
28x28 with bilinear interpolation, and normalize to ink-is-one floats for
the learner. Failures are recorded per file, never fatal for the batch.
"""
from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fontTools.ttLib import TTFont
from PIL import Image, ImageDraw, ImageFont

from .errors import DimensionError, EmptyGlyph, IoError, MissingGlyph, ParseError

# Anti-aliased edges are near-white; anything at or below this counts as ink.
INK_THRESHOLD = 250
# Glyph em size on the 256 canvas. Exact placement is immaterial post-crop.
PIXELS_PER_EM = 200
DEFAULT_CANVAS = 256
TARGET_SIZE = 28
DEFAULT_CODEPOINT = 0x41  # "A"

FONT_SUFFIXES = (".ttf", ".otf")


class RawBitmap:
    """Grayscale image, uint8 row-major, 255 = white background."""

    __slots__ = ("pixels",)

    def __init__(self, pixels):
        arr = np.asarray(pixels, dtype=np.uint8)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(f"bitmap must be 2-D and non-empty, got shape {arr.shape}")
        self.pixels = arr

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __repr__(self) -> str:
        return f"RawBitmap({self.height}x{self.width})"


class GlyphBitmap:
    """28x28 float image in [0, 1]; 1 = full ink, 0 = background."""

    __slots__ = ("pixels",)

    def __init__(self, pixels):
        arr = np.asarray(pixels, dtype=np.float64)
        if arr.shape != (TARGET_SIZE, TARGET_SIZE):
            raise DimensionError(f"glyph bitmap must be 28x28, got shape {arr.shape}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise DimensionError("glyph bitmap intensities must lie in [0, 1]")
        self.pixels = arr

    def __repr__(self) -> str:
        return "GlyphBitmap(28x28)"


@dataclass
class ManifestEntry:
    font_id: str
    source_file: str
    status: str                      # "ok" | "skipped"
    reason: str | None = None
    bitmap_path: str | None = None   # relative to the manifest directory

    def to_json(self) -> str:
        return json.dumps({"font_id": self.font_id, "source_file": self.source_file,
                           "status": self.status, "reason": self.reason,
                           "bitmap_path": self.bitmap_path},
                          ensure_ascii=False, sort_keys=True)


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    base_dir: Path | None = None     # directory the bitmap paths resolve against

    def ok_entries(self) -> list[ManifestEntry]:
        return [e for e in self.entries if e.status == "ok"]


def rasterize_glyph(font_bytes: bytes, codepoint: int = DEFAULT_CODEPOINT,
                    canvas: int = DEFAULT_CANVAS) -> RawBitmap:
    """Render one glyph, black on white, anti-aliased, centered on the canvas."""
    if canvas < 64:
        raise DimensionError(f"canvas must be at least 64 pixels, got {canvas}")
    try:
        tt = TTFont(io.BytesIO(font_bytes), fontNumber=0, lazy=True)
        cmap = tt.getBestCmap()
    except Exception as exc:  # fontTools raises a small zoo of types here
        raise ParseError(f"not a parseable TrueType/OpenType container: {exc}") from exc
    if not cmap or codepoint not in cmap:
        raise MissingGlyph(f"font has no mapping for U+{codepoint:04X}")
    try:
        face = ImageFont.truetype(io.BytesIO(font_bytes), size=PIXELS_PER_EM)
    except Exception as exc:
        raise ParseError(f"rasterizer rejected the font: {exc}") from exc

    image = Image.new("L", (canvas, canvas), color=255)
    draw = ImageDraw.Draw(image)
    draw.text((canvas / 2, canvas / 2), chr(codepoint), font=face, fill=0, anchor="mm")
    raw = RawBitmap(np.asarray(image, dtype=np.uint8))
    if not np.any(raw.pixels <= INK_THRESHOLD):
        raise EmptyGlyph(f"U+{codepoint:04X} renders no ink")
    return raw


def crop_to_ink(raw: RawBitmap) -> RawBitmap:
    """Tight bounding box of ink pixels (intensity <= 250)."""
    mask = raw.pixels <= INK_THRESHOLD
    if not mask.any():
        raise EmptyGlyph("image contains no ink pixels")
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return RawBitmap(raw.pixels[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1])


def pad_to_square(raw: RawBitmap) -> RawBitmap:
    """Pad the short side with white, alternating bottom/right then top/left."""
    h, w = raw.pixels.shape
    side = max(h, w)
    # Alternation starts on the bottom/right, so that side gets the odd row.
    deficit_rows = side - h
    deficit_cols = side - w
    top = deficit_rows // 2
    bottom = deficit_rows - top
    left = deficit_cols // 2
    right = deficit_cols - left
    padded = np.pad(raw.pixels, ((top, bottom), (left, right)), constant_values=255)
    return RawBitmap(padded)


def resize_bilinear(square: RawBitmap, target: int) -> RawBitmap:
    """Bilinear resample with pixel-center alignment and border clamping.

    Source coordinate for destination x_d is (x_d + 0.5) * S / target - 0.5;
    the result is rounded half-up to the nearest integer intensity.
    """
    src = square.pixels
    if src.shape[0] != src.shape[1]:
        raise DimensionError(f"input must be square, got shape {src.shape}")
    if target < 1:
        raise DimensionError(f"target must be >= 1, got {target}")
    size = src.shape[0]

    coords = (np.arange(target) + 0.5) * size / target - 0.5
    low = np.floor(coords).astype(np.int64)
    frac = coords - low
    i0 = np.clip(low, 0, size - 1)
    i1 = np.clip(low + 1, 0, size - 1)

    src_f = src.astype(np.float64)
    rows = (src_f[i0, :] * (1.0 - frac)[:, None] + src_f[i1, :] * frac[:, None])
    out = (rows[:, i0] * (1.0 - frac)[None, :] + rows[:, i1] * frac[None, :])
    return RawBitmap(np.floor(out + 0.5).astype(np.uint8))


def to_training_bitmap(raw28: RawBitmap) -> GlyphBitmap:
    """Invert and normalize: 255 (white) -> 0.0, 0 (black) -> 1.0."""
    if raw28.pixels.shape != (TARGET_SIZE, TARGET_SIZE):
        raise DimensionError(f"expected 28x28 input, got shape {raw28.pixels.shape}")
    return GlyphBitmap((255.0 - raw28.pixels.astype(np.float64)) / 255.0)


def from_training_bitmap(bitmap: GlyphBitmap) -> RawBitmap:
    """Inverse of to_training_bitmap up to rounding."""
    return RawBitmap(np.floor(255.0 - bitmap.pixels * 255.0 + 0.5).astype(np.uint8))


def cleanse(raw: RawBitmap) -> RawBitmap:
    """crop -> pad -> resize, the full 28x28 cleansing chain."""
    return resize_bilinear(pad_to_square(crop_to_ink(raw)), TARGET_SIZE)


def save_bitmap_png(raw: RawBitmap, path: Path) -> None:
    Image.fromarray(raw.pixels, mode="L").save(path, format="PNG")


def load_bitmap_png(path: Path) -> RawBitmap:
    with Image.open(path) as img:
        return RawBitmap(np.asarray(img.convert("L"), dtype=np.uint8))


def load_glyph(manifest: DatasetManifest, entry: ManifestEntry) -> GlyphBitmap:
    if entry.status != "ok" or entry.bitmap_path is None:
        raise IoError(f"entry {entry.font_id} carries no bitmap")
    base = manifest.base_dir or Path(".")
    return to_training_bitmap(load_bitmap_png(base / entry.bitmap_path))


def _font_id_for(path: Path, taken: set[str]) -> str:
    stem = path.stem
    if stem not in taken:
        return stem
    suffix = hashlib.sha256(path.name.encode("utf-8")).hexdigest()[:8]
    return f"{stem}-{suffix}"


def ingest_corpus(font_dir: Path, out_dir: Path,
                  codepoint: int = DEFAULT_CODEPOINT) -> DatasetManifest:
    """Run the cleansing pipeline over every font file under font_dir.

    Writes out_dir/bitmaps/<font_id>.png for each usable font plus
    out_dir/manifest.jsonl; failures become skipped entries with a reason.
    Output is deterministic for a fixed file set.
    """
    font_dir = Path(font_dir)
    out_dir = Path(out_dir)
    try:
        files = sorted(p for p in font_dir.iterdir()
                       if p.is_file() and p.suffix.lower() in FONT_SUFFIXES)
    except OSError as exc:
        raise IoError(f"cannot read font directory {font_dir}: {exc}") from exc

    bitmaps_dir = out_dir / "bitmaps"
    bitmaps_dir.mkdir(parents=True, exist_ok=True)

    entries: list[ManifestEntry] = []
    taken: set[str] = set()
    for path in files:
        font_id = _font_id_for(path, taken)
        taken.add(font_id)
        try:
            raw = rasterize_glyph(path.read_bytes(), codepoint=codepoint)
            raw28 = cleanse(raw)
        except (ParseError, MissingGlyph, EmptyGlyph, OSError) as exc:
            entries.append(ManifestEntry(font_id=font_id, source_file=str(path),
                                         status="skipped",
                                         reason=f"{type(exc).__name__}: {exc}"))
            continue
        rel = f"bitmaps/{font_id}.png"
        save_bitmap_png(raw28, out_dir / rel)
        entries.append(ManifestEntry(font_id=font_id, source_file=str(path),
                                     status="ok", bitmap_path=rel))

    entries.sort(key=lambda e: e.font_id)
    manifest = DatasetManifest(entries=entries, base_dir=out_dir)
    write_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest


def write_manifest(manifest: DatasetManifest, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for entry in manifest.entries:
            fh.write(entry.to_json() + "\n")


def load_manifest(path: Path) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.jsonl"
    entries = []
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                entries.append(ManifestEntry(font_id=obj["font_id"],
                                             source_file=obj["source_file"],
                                             status=obj["status"],
                                             reason=obj.get("reason"),
                                             bitmap_path=obj.get("bitmap_path")))
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc
    return DatasetManifest(entries=entries, base_dir=path.parent)
