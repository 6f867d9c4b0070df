"""Similarity and comparison-study statistics.

SSIM here is the single global-statistics formula over two whole 28x28
images (no sliding window), with C1 = 6.5 and C2 = 58.5 on the 0..255
intensity scale and population (divide-by-N) moments. The raw formula can
go negative for anticorrelated images; clamping to [0, 1] happens only
where values are recorded for reporting.
"""
from __future__ import annotations

import json
import string
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (DegenerateData, DimensionError, EmptyCorpus,
                     MissingInterface, MissingGlyph, EmptyGlyph, ParseError)
from .ingest import (DatasetManifest, GlyphBitmap, cleanse, load_glyph,
                     rasterize_glyph)
from .numerics import student_t_two_tailed_p

SSIM_C1 = 6.5
SSIM_C2 = 58.5

INTERFACES = ("manifold", "grid")


def ssim(a: GlyphBitmap, b: GlyphBitmap) -> float:
    """Global-statistics structural similarity of two glyph bitmaps.

    Intensities are rescaled to 0..255 before the moments are taken;
    ssim(x, x) is exactly 1.0.
    """
    if not isinstance(a, GlyphBitmap) or not isinstance(b, GlyphBitmap):
        raise DimensionError("ssim expects two GlyphBitmap values")
    x = a.pixels * 255.0
    y = b.pixels * 255.0
    mu_x = x.mean()
    mu_y = y.mean()
    dx = x - mu_x
    dy = y - mu_y
    var_x = np.mean(dx * dx)
    var_y = np.mean(dy * dy)
    cov_xy = np.mean(dx * dy)
    return float(((2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov_xy + SSIM_C2))
                 / ((mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)))


def clamp_ssim(value: float) -> float:
    """Reporting-layer clamp to [0, 1] (the raw formula can dip below 0)."""
    return min(1.0, max(0.0, value))


@dataclass
class MatchResult:
    font_id: str
    ssim: float


def match_closest_font(query: GlyphBitmap, corpus: DatasetManifest) -> MatchResult:
    """Font whose cleansed glyph maximizes SSIM against the query.

    Ties break toward the lexicographically smallest font_id, so the result
    is independent of corpus ordering.
    """
    entries = sorted(corpus.ok_entries(), key=lambda e: e.font_id)
    if not entries:
        raise EmptyCorpus("corpus has no ok entries")
    best_id = None
    best_score = -np.inf
    for entry in entries:
        score = ssim(query, load_glyph(corpus, entry))
        if score > best_score:
            best_id = entry.font_id
            best_score = score
    return MatchResult(font_id=best_id, ssim=float(best_score))


@dataclass
class AlphabetStrip:
    """26 cleansed 28x28 cells concatenated horizontally (728x28 pixels)."""
    image: np.ndarray                  # (28, 728) uint8, white background
    missing: list[tuple[str, str]]     # (letter, reason) for blank cells


def render_alphabet(font_bytes: bytes,
                    letters: str = string.ascii_uppercase) -> AlphabetStrip:
    """Rasterize each letter through the cleansing pipeline into one strip.

    Letters the font cannot render become blank white cells and are
    recorded rather than failing the strip.
    """
    cells = []
    missing: list[tuple[str, str]] = []
    for letter in letters:
        try:
            raw = rasterize_glyph(font_bytes, codepoint=ord(letter))
            cells.append(cleanse(raw).pixels)
        except (MissingGlyph, EmptyGlyph, ParseError) as exc:
            missing.append((letter, f"{type(exc).__name__}: {exc}"))
            cells.append(np.full((28, 28), 255, dtype=np.uint8))
    return AlphabetStrip(image=np.concatenate(cells, axis=1), missing=missing)


# --- comparison-study statistics --------------------------------------------

@dataclass
class ComparisonRecord:
    participant_id: str
    interface: str                 # "manifold" | "grid"
    task_id: str
    target_id: str
    selected: dict                 # image reference: {"z": [...]} etc.
    ssim: float                    # clamped to [0, 1] at record time
    elapsed_ms: int

    def to_json(self) -> str:
        return json.dumps({"participant_id": self.participant_id,
                           "interface": self.interface, "task_id": self.task_id,
                           "target_id": self.target_id, "selected": self.selected,
                           "ssim": self.ssim, "elapsed_ms": self.elapsed_ms},
                          ensure_ascii=False, sort_keys=True)

    @staticmethod
    def from_obj(obj: dict) -> "ComparisonRecord":
        return ComparisonRecord(participant_id=obj["participant_id"],
                                interface=obj["interface"], task_id=obj["task_id"],
                                target_id=obj["target_id"], selected=obj["selected"],
                                ssim=float(obj["ssim"]), elapsed_ms=int(obj["elapsed_ms"]))


@dataclass
class TTestResult:
    t: float
    df: int
    p: float


def two_sample_ttest(xs: Sequence[float], ys: Sequence[float]) -> TTestResult:
    """Unpaired pooled-variance Student's t with a two-tailed p value."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.size < 2 or ys.size < 2:
        raise DegenerateData("t-test needs at least two observations per side")
    nx, ny = xs.size, ys.size
    df = nx + ny - 2
    pooled_var = (np.sum((xs - xs.mean()) ** 2) + np.sum((ys - ys.mean()) ** 2)) / df
    diff = xs.mean() - ys.mean()
    if pooled_var == 0.0:
        if diff == 0.0:
            raise DegenerateData("zero pooled variance with equal means")
        # Degenerate but directional: report an infinite statistic.
        return TTestResult(t=float(np.inf) if diff > 0 else float(-np.inf), df=df, p=0.0)
    t = diff / np.sqrt(pooled_var * (1.0 / nx + 1.0 / ny))
    return TTestResult(t=float(t), df=int(df), p=student_t_two_tailed_p(float(t), int(df)))


def _summary(values: np.ndarray) -> dict:
    q1, median, q3 = np.percentile(values, [25, 50, 75])
    return {"min": float(values.min()), "q1": float(q1), "median": float(median),
            "q3": float(q3), "max": float(values.max()), "mean": float(values.mean())}


def analyze_comparison(records: Sequence[ComparisonRecord]) -> dict:
    """Per-interface SSIM/time summaries, the grid/manifold time ratio, and a
    t-test on elapsed times, as one JSON-ready report."""
    by_interface: dict[str, list[ComparisonRecord]] = {name: [] for name in INTERFACES}
    for record in records:
        if record.interface in by_interface:
            by_interface[record.interface].append(record)
    for name in INTERFACES:
        if not by_interface[name]:
            raise MissingInterface(f"no records for interface {name!r}")

    report: dict = {"interfaces": {}}
    for name in INTERFACES:
        ssims = np.array([clamp_ssim(r.ssim) for r in by_interface[name]])
        times = np.array([float(r.elapsed_ms) for r in by_interface[name]])
        report["interfaces"][name] = {"count": len(by_interface[name]),
                                      "ssim": _summary(ssims),
                                      "elapsed_ms": _summary(times)}
    grid_times = [float(r.elapsed_ms) for r in by_interface["grid"]]
    manifold_times = [float(r.elapsed_ms) for r in by_interface["manifold"]]
    report["time_ratio_grid_over_manifold"] = (
        float(np.mean(grid_times)) / float(np.mean(manifold_times)))
    try:
        result = two_sample_ttest(grid_times, manifold_times)
        if not np.isfinite(result.t):
            raise DegenerateData("zero variance in elapsed times")
        report["elapsed_ttest"] = {"t": result.t, "df": result.df, "p": result.p}
    except DegenerateData as exc:
        report["elapsed_ttest"] = {"status": "insufficient", "reason": str(exc)}
    return report
