"""Manifold learning over labeled latent vectors.

Exact (O(N^2)) t-SNE reduces the 5-D perception-labeled latents to 2-D,
Gaussian KDE with Silverman rule-of-thumb bandwidths turns each perception
subset into a density heatmap, and inverse-distance interpolation maps a
2-D click back to a 5-D latent vector. Hyperparameters follow the standard
reference implementation: perplexity binary search, early exaggeration,
momentum schedule, adaptive per-element gains.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from PIL import Image

from .errors import (CalibrationError, DegenerateData, DomainError,
                     EmptySelection, IoError, TooFewPoints)
from .rng import Rng
from .study import LabeledSample, PerceptionLabel
from . import autodiff as ad

GRID_SIZE = 256
_LN2 = math.log(2.0)

# KDE heatmap color ramp, low to high density.
_RAMP = np.array([(0, 0, 255), (0, 255, 255), (0, 255, 0),
                  (255, 255, 0), (255, 0, 0)], dtype=np.float64)

LABEL_FILTERS: dict[str, PerceptionLabel | None] = {
    "all": None,
    "pop": PerceptionLabel.POP,
    "formal": PerceptionLabel.FORMAL,
    "casual": PerceptionLabel.CASUAL,
}


@dataclass
class TsneConfig:
    perplexity: float = 30.0          # clamped to (N-1)/3 at run time
    iterations: int = 1000
    learning_rate: float = 200.0
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    initial_momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch_iter: int = 250
    init_std: float = 1e-4
    seed: int = 7


@dataclass
class Bounds:
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def to_obj(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max,
                "y_min": self.y_min, "y_max": self.y_max}

    @staticmethod
    def from_obj(obj: dict) -> "Bounds":
        return Bounds(x_min=float(obj["x_min"]), x_max=float(obj["x_max"]),
                      y_min=float(obj["y_min"]), y_max=float(obj["y_max"]))


@dataclass
class EmbeddedSample:
    sample_id: str
    coords: np.ndarray               # (2,) t-SNE coordinates
    label: PerceptionLabel
    latent: np.ndarray               # the exact 5-D vector that was embedded


@dataclass
class HeatmapGrid:
    width: int
    height: int
    bounds: Bounds
    density: np.ndarray              # (height, width), row 0 at y_min
    bandwidth: tuple[float, float]


def _filtered(samples: Sequence[EmbeddedSample],
              label_filter: PerceptionLabel | None) -> list[EmbeddedSample]:
    if label_filter is None:
        return list(samples)
    return [s for s in samples if s.label == label_filter]


# --- t-SNE -------------------------------------------------------------------

def perplexity_calibrate(sq_distances_row: np.ndarray,
                         target_perplexity: float) -> tuple[np.ndarray, float]:
    """Binary-search the Gaussian precision beta for one conditional row.

    Returns probabilities p_i proportional to exp(-beta * d_i) whose Shannon
    entropy (bits) matches log2(target_perplexity); the search runs at most
    64 iterations and normally lands far inside the 1e-5 contract.
    """
    d = np.asarray(sq_distances_row, dtype=np.float64)
    if d.size < 2 or not np.all(np.isfinite(d)):
        raise CalibrationError("need at least 2 finite distances")
    if target_perplexity < 2.0:
        raise DomainError(f"target perplexity must be >= 2, got {target_perplexity}")
    if np.all(d == 0.0):
        raise CalibrationError("all distances are zero; entropy cannot be tuned")

    log_target = math.log2(target_perplexity)
    shifted = d - d.min()

    def entropy_at(beta: float) -> tuple[np.ndarray, float]:
        e = np.exp(-beta * shifted)
        z = e.sum()
        p = e / z
        h_nats = math.log(z) + beta * float(np.dot(p, shifted))
        return p, h_nats / _LN2

    beta = 1.0
    beta_lo: float | None = None
    beta_hi: float | None = None
    p, h = entropy_at(beta)
    for _ in range(64):
        diff = h - log_target
        if abs(diff) < 1e-9:
            break
        if diff > 0:                      # entropy too high: sharpen
            beta_lo = beta
            beta = beta * 2.0 if beta_hi is None else 0.5 * (beta + beta_hi)
        else:
            beta_hi = beta
            beta = beta / 2.0 if beta_lo is None else 0.5 * (beta + beta_lo)
        p, h = entropy_at(beta)
    return p, beta


def _pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    s = np.sum(x * x, axis=1)
    d = s[:, None] + s[None, :] - 2.0 * (x @ x.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def joint_probabilities(points: np.ndarray, perplexity: float) -> np.ndarray:
    """Symmetrized t-SNE affinities: p_ij = (p_{j|i} + p_{i|j}) / 2N."""
    n = points.shape[0]
    d = _pairwise_sq_dists(points)
    cond = np.zeros((n, n))
    mask = ~np.eye(n, dtype=bool)
    for i in range(n):
        row, _ = perplexity_calibrate(d[i][mask[i]], perplexity)
        cond[i][mask[i]] = row
    return (cond + cond.T) / (2.0 * n)


def _kl_objective(p: np.ndarray, q: np.ndarray) -> float:
    positive = p > 0.0
    return float(np.sum(p[positive] * np.log(p[positive] / np.maximum(q[positive], 1e-12))))


def tsne(points: np.ndarray, config: TsneConfig,
         on_iteration: Callable[[int, float], None] | None = None) -> np.ndarray:
    """Reduce N x 5 latents to N x 2 coordinates, deterministically.

    on_iteration(k, kl) reports the KL(P || Q) objective of the state after
    k gradient updates (k = 0 is the initialization, k = iterations the
    final embedding); exaggeration is excluded from the reported objective.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise DomainError(f"points must be a 2-D array, got shape {x.shape}")
    n = x.shape[0]
    if n < 12:
        raise TooFewPoints(f"t-SNE needs at least 12 points, got {n}")
    if not np.all(np.isfinite(x)):
        raise DomainError("points must be finite")

    perplexity = min(config.perplexity, (n - 1) // 3)
    p = joint_probabilities(x, perplexity)

    rng = Rng(config.seed)
    y = config.init_std * ad.gaussian_sample(rng, n * 2).reshape(n, 2)
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)

    for it in range(config.iterations):
        sum_y = np.sum(y * y, axis=1)
        num = 1.0 / (1.0 + sum_y[:, None] + sum_y[None, :] - 2.0 * (y @ y.T))
        np.fill_diagonal(num, 0.0)
        q = num / num.sum()

        if on_iteration is not None:
            on_iteration(it, _kl_objective(p, q))

        exaggeration = config.early_exaggeration if it < config.exaggeration_iters else 1.0
        momentum = (config.initial_momentum if it < config.momentum_switch_iter
                    else config.final_momentum)
        pq = (exaggeration * p - q) * num
        grad = 4.0 * (pq.sum(axis=1)[:, None] * y - pq @ y)

        inc = (grad > 0.0) != (velocity > 0.0)
        gains = np.where(inc, gains + 0.2, gains * 0.8)
        np.maximum(gains, 0.01, out=gains)
        velocity = momentum * velocity - config.learning_rate * (gains * grad)
        y = y + velocity
        y = y - y.mean(axis=0)

    if on_iteration is not None:
        sum_y = np.sum(y * y, axis=1)
        num = 1.0 / (1.0 + sum_y[:, None] + sum_y[None, :] - 2.0 * (y @ y.T))
        np.fill_diagonal(num, 0.0)
        on_iteration(config.iterations, _kl_objective(p, num / num.sum()))
    return y


# --- KDE ---------------------------------------------------------------------

def silverman_bandwidth(coords: np.ndarray) -> tuple[float, float]:
    """Per-axis rule-of-thumb bandwidth h = sigma * N^(-1/6) for 2-D data."""
    c = np.asarray(coords, dtype=np.float64)
    if c.ndim != 2 or c.shape[1] != 2 or c.shape[0] < 2:
        raise DegenerateData(f"need at least two 2-D points, got shape {c.shape}")
    sigma = c.std(axis=0)            # population standard deviation
    if sigma[0] == 0.0 or sigma[1] == 0.0:
        raise DegenerateData("zero variance on an axis; supply a fallback bandwidth")
    factor = c.shape[0] ** (-1.0 / 6.0)
    return float(sigma[0] * factor), float(sigma[1] * factor)


def kde_heatmap(samples: Sequence[EmbeddedSample],
                label_filter: PerceptionLabel | None = None,
                grid_width: int = GRID_SIZE, grid_height: int = GRID_SIZE,
                bounds: Bounds | None = None) -> HeatmapGrid:
    """Gaussian-kernel density of the filtered samples on a regular grid.

    Default bounds are the bounding box of *all* samples expanded by
    3 * max(h_x, h_y) per side; pass explicit bounds to share one rectangle
    across the per-perception views.
    """
    chosen = _filtered(samples, label_filter)
    if not chosen:
        raise EmptySelection("label filter removed every sample")
    coords = np.array([s.coords for s in chosen], dtype=np.float64)
    h_x, h_y = silverman_bandwidth(coords)

    if bounds is None:
        every = np.array([s.coords for s in samples], dtype=np.float64)
        pad = 3.0 * max(h_x, h_y)
        bounds = Bounds(x_min=float(every[:, 0].min() - pad),
                        x_max=float(every[:, 0].max() + pad),
                        y_min=float(every[:, 1].min() - pad),
                        y_max=float(every[:, 1].max() + pad))

    xs = bounds.x_min + (np.arange(grid_width) + 0.5) * (bounds.x_max - bounds.x_min) / grid_width
    ys = bounds.y_min + (np.arange(grid_height) + 0.5) * (bounds.y_max - bounds.y_min) / grid_height
    gauss_x = np.exp(-((xs[None, :] - coords[:, 0:1]) ** 2) / (2.0 * h_x * h_x)) \
        / (h_x * math.sqrt(2.0 * math.pi))
    gauss_y = np.exp(-((ys[None, :] - coords[:, 1:2]) ** 2) / (2.0 * h_y * h_y)) \
        / (h_y * math.sqrt(2.0 * math.pi))
    density = (gauss_y.T @ gauss_x) / coords.shape[0]
    return HeatmapGrid(width=grid_width, height=grid_height, bounds=bounds,
                       density=density, bandwidth=(h_x, h_y))


def locate_latent(click: Sequence[float], samples: Sequence[EmbeddedSample],
                  label_filter: PerceptionLabel | None = None,
                  k: int = 5) -> np.ndarray:
    """Map a 2-D click back to a latent vector.

    A click landing exactly on an embedded sample returns that sample's
    latent; otherwise the inverse-distance-weighted mean of the k nearest
    filtered samples (k truncated to the available count).
    """
    chosen = _filtered(samples, label_filter)
    if not chosen:
        raise EmptySelection("label filter removed every sample")
    point = np.asarray(click, dtype=np.float64)
    coords = np.array([s.coords for s in chosen], dtype=np.float64)
    dists = np.sqrt(((coords - point[None, :]) ** 2).sum(axis=1))
    order = np.argsort(dists, kind="stable")
    if dists[order[0]] < 1e-12:
        return np.array(chosen[order[0]].latent, dtype=np.float64, copy=True)
    take = order[:min(k, len(chosen))]
    weights = 1.0 / (dists[take] + 1e-9)
    latents = np.array([chosen[i].latent for i in take], dtype=np.float64)
    return (weights[:, None] * latents).sum(axis=0) / weights.sum()


# --- rendering and bundle IO ---------------------------------------------------

def colorize_density(density: np.ndarray) -> np.ndarray:
    """5-stop blue-cyan-green-yellow-red ramp over max-normalized density."""
    peak = density.max()
    t = density / peak if peak > 0.0 else np.zeros_like(density)
    seg = np.clip(t * 4.0, 0.0, 4.0)
    idx = np.minimum(seg.astype(np.int64), 3)
    frac = seg - idx
    lo = _RAMP[idx]
    hi = _RAMP[idx + 1]
    rgb = lo + (hi - lo) * frac[..., None]
    return np.floor(rgb + 0.5).astype(np.uint8)


def heatmap_to_image(grid: HeatmapGrid) -> Image.Image:
    """Colorized PNG-ready image; row 0 (top) is the y_max edge."""
    return Image.fromarray(colorize_density(grid.density)[::-1], mode="RGB")


_F64_HEADER = struct.Struct("<II4d")


def write_heatmap_f64(grid: HeatmapGrid, path: Path) -> None:
    """Raw density dump: width/height u32, bounds 4 x f64, then row-major
    little-endian f64 densities (row 0 at y_min)."""
    b = grid.bounds
    payload = _F64_HEADER.pack(grid.width, grid.height,
                               b.x_min, b.x_max, b.y_min, b.y_max)
    Path(path).write_bytes(payload + np.ascontiguousarray(grid.density, dtype="<f8").tobytes())


def read_heatmap_f64(path: Path) -> HeatmapGrid:
    data = Path(path).read_bytes()
    width, height, x_min, x_max, y_min, y_max = _F64_HEADER.unpack_from(data, 0)
    density = np.frombuffer(data, dtype="<f8", offset=_F64_HEADER.size)
    if density.size != width * height:
        raise IoError(f"heatmap payload size mismatch in {path}")
    return HeatmapGrid(width=width, height=height,
                       bounds=Bounds(x_min, x_max, y_min, y_max),
                       density=density.reshape(height, width).copy(),
                       bandwidth=(0.0, 0.0))


@dataclass
class ManifoldBundle:
    """Embedded samples plus heatmap artifacts, as loaded from a bundle dir."""
    samples: list[EmbeddedSample]
    bounds: Bounds
    manifest: dict
    base_dir: Path | None = None

    def heatmap_png(self, label_key: str) -> Path | None:
        info = self.manifest["labels"].get(label_key)
        if not info or "png" not in info:
            return None
        return (self.base_dir or Path(".")) / info["png"]


def build_manifold_bundle(labeled: Sequence[LabeledSample], config: TsneConfig,
                          out_dir: Path, grid_size: int = GRID_SIZE) -> ManifoldBundle:
    """t-SNE the labeled latents and write the exploration bundle.

    One bounds rectangle is shared across the all/pop/formal/casual
    heatmaps (box of all samples padded by 3 x the largest bandwidth) so a
    control point means the same thing under every perception filter.
    """
    labeled = list(labeled)
    latents = np.array([s.latent for s in labeled], dtype=np.float64)
    coords = tsne(latents, config)
    samples = [EmbeddedSample(sample_id=s.sample_id, coords=coords[i],
                              label=s.label, latent=np.asarray(s.latent, dtype=np.float64))
               for i, s in enumerate(labeled)]

    bandwidths: dict[str, tuple[float, float]] = {}
    skipped: dict[str, str] = {}
    for key, filt in LABEL_FILTERS.items():
        subset = _filtered(samples, filt)
        try:
            bandwidths[key] = silverman_bandwidth(
                np.array([s.coords for s in subset], dtype=np.float64))
        except DegenerateData as exc:
            skipped[key] = str(exc)

    pad = 3.0 * max(max(h) for h in bandwidths.values())
    bounds = Bounds(x_min=float(coords[:, 0].min() - pad),
                    x_max=float(coords[:, 0].max() + pad),
                    y_min=float(coords[:, 1].min() - pad),
                    y_max=float(coords[:, 1].max() + pad))

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "embedding.jsonl", "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps({"sample_id": s.sample_id,
                                 "coords": [float(s.coords[0]), float(s.coords[1])],
                                 "label": s.label.value,
                                 "latent": [float(v) for v in s.latent]},
                                ensure_ascii=False, sort_keys=True) + "\n")

    label_info: dict[str, dict] = {}
    for key, filt in LABEL_FILTERS.items():
        if key in skipped:
            label_info[key] = {"skipped": skipped[key]}
            continue
        grid = kde_heatmap(samples, filt, grid_size, grid_size, bounds=bounds)
        png_name = f"heatmap_{key}.png"
        f64_name = f"heatmap_{key}.f64"
        heatmap_to_image(grid).save(out_dir / png_name, format="PNG")
        write_heatmap_f64(grid, out_dir / f64_name)
        label_info[key] = {"count": len(_filtered(samples, filt)),
                           "bandwidth": [grid.bandwidth[0], grid.bandwidth[1]],
                           "png": png_name, "f64": f64_name}

    manifest = {"grid": {"width": grid_size, "height": grid_size},
                "bounds": bounds.to_obj(),
                "labels": label_info,
                "tsne": {"perplexity": config.perplexity,
                         "iterations": config.iterations,
                         "learning_rate": config.learning_rate,
                         "early_exaggeration": config.early_exaggeration,
                         "exaggeration_iters": config.exaggeration_iters,
                         "momentum_switch_iter": config.momentum_switch_iter,
                         "init_std": config.init_std,
                         "seed": config.seed},
                "sample_count": len(samples)}
    with open(out_dir / "bundle.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")
    return ManifoldBundle(samples=samples, bounds=bounds, manifest=manifest,
                          base_dir=out_dir)


def load_bundle(bundle_dir: Path) -> ManifoldBundle:
    bundle_dir = Path(bundle_dir)
    try:
        manifest = json.loads((bundle_dir / "bundle.json").read_text(encoding="utf-8"))
        lines = (bundle_dir / "embedding.jsonl").read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoError(f"cannot read manifold bundle {bundle_dir}: {exc}") from exc
    samples = []
    for line in lines:
        if not line.strip():
            continue
        obj = json.loads(line)
        samples.append(EmbeddedSample(sample_id=obj["sample_id"],
                                      coords=np.array(obj["coords"], dtype=np.float64),
                                      label=PerceptionLabel.parse(obj["label"]),
                                      latent=np.array(obj["latent"], dtype=np.float64)))
    return ManifoldBundle(samples=samples, bounds=Bounds.from_obj(manifest["bounds"]),
                          manifest=manifest, base_dir=bundle_dir)
