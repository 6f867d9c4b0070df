"""The font VAE: encoder, reparameterized latent, decoder, training loop,
checkpoint format, and the percentile slider-to-latent map.

Architecture (28x28 in, 5-D latent):
  encoder: conv 16ch/stride2 -> conv 32ch/stride2 -> conv 32ch -> conv 32ch
           -> flatten 1568 -> dense mu(5) and dense logvar(5)
  decoder: dense 5->1568 -> reshape 32x7x7 -> upsample -> conv 16ch
           -> upsample -> conv 1ch -> sigmoid
All convolutions are 3x3 with zero padding 1, hidden activations are ReLU.
Loss is pixel binary cross-entropy plus unweighted KL, optimized with Adam.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import CheckpointError, EmptyDataset, RangeError
from .ingest import GlyphBitmap, DatasetManifest, load_glyph
from .numerics import gaussian_ppf
from .rng import Rng

LATENT_DIM = 5
FLAT_SIZE = 32 * 7 * 7  # 1568, the encoder flatten width

CHECKPOINT_MAGIC = b"PFMC"
CHECKPOINT_VERSION = 1

# (name, kind, shape, init std rule); order fixes the init draw sequence.
_PARAM_DEFS = (
    ("enc_conv1.kernel", (16, 1, 3, 3)),
    ("enc_conv1.bias", (16,)),
    ("enc_conv2.kernel", (32, 16, 3, 3)),
    ("enc_conv2.bias", (32,)),
    ("enc_conv3.kernel", (32, 32, 3, 3)),
    ("enc_conv3.bias", (32,)),
    ("enc_conv4.kernel", (32, 32, 3, 3)),
    ("enc_conv4.bias", (32,)),
    ("enc_mu.weight", (LATENT_DIM, FLAT_SIZE)),
    ("enc_mu.bias", (LATENT_DIM,)),
    ("enc_logvar.weight", (LATENT_DIM, FLAT_SIZE)),
    ("enc_logvar.bias", (LATENT_DIM,)),
    ("dec_dense.weight", (FLAT_SIZE, LATENT_DIM)),
    ("dec_dense.bias", (FLAT_SIZE,)),
    ("dec_conv1.kernel", (16, 32, 3, 3)),
    ("dec_conv1.bias", (16,)),
    ("dec_conv2.kernel", (1, 16, 3, 3)),
    ("dec_conv2.bias", (1,)),
)

LAYER_SPEC = {
    "encoder_convs": [[1, 16, 2], [16, 32, 2], [32, 32, 1], [32, 32, 1]],
    "flatten": FLAT_SIZE,
    "decoder_convs": [[32, 16, 1], [16, 1, 1]],
    "kernel_size": 3,
}


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 7


@dataclass
class VaeModel:
    """Named parameter tensors plus the hyperparameters that produced them."""
    params: dict[str, np.ndarray]
    hyper: dict

    @property
    def latent_dim(self) -> int:
        return int(self.hyper.get("latent_dim", LATENT_DIM))


def _init_std(name: str, shape: tuple[int, ...]) -> float:
    if name.endswith(".bias"):
        return 0.0
    if name.startswith(("enc_mu", "enc_logvar")):
        return float(np.sqrt(1.0 / shape[1]))          # linear heads
    if name.endswith(".kernel"):
        return float(np.sqrt(2.0 / (shape[1] * 9)))    # He, ReLU convs
    return float(np.sqrt(2.0 / shape[1]))              # He, ReLU dense


def init_params(rng: Rng) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    for name, shape in _PARAM_DEFS:
        std = _init_std(name, shape)
        n = int(np.prod(shape))
        if std == 0.0:
            params[name] = np.zeros(shape)
        else:
            params[name] = (ad.gaussian_sample(rng, n) * std).reshape(shape)
    return params


def new_model(seed: int) -> VaeModel:
    """Freshly initialized (untrained) model."""
    params = init_params(Rng(seed))
    hyper = {"latent_dim": LATENT_DIM, "layer_spec": LAYER_SPEC,
             "seed": seed, "epochs_completed": 0}
    return VaeModel(params=params, hyper=hyper)


def _tensors(params: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {name: Tensor(values) for name, values in params.items()}


def _encoder(tape: Tape, pt: dict[str, Tensor], x: Tensor) -> tuple[Tensor, Tensor]:
    h = ad.relu(tape, ad.conv2d(tape, x, pt["enc_conv1.kernel"], pt["enc_conv1.bias"], 2))
    h = ad.relu(tape, ad.conv2d(tape, h, pt["enc_conv2.kernel"], pt["enc_conv2.bias"], 2))
    h = ad.relu(tape, ad.conv2d(tape, h, pt["enc_conv3.kernel"], pt["enc_conv3.bias"], 1))
    h = ad.relu(tape, ad.conv2d(tape, h, pt["enc_conv4.kernel"], pt["enc_conv4.bias"], 1))
    flat = ad.reshape(tape, h, (FLAT_SIZE,))
    mu = ad.dense(tape, flat, pt["enc_mu.weight"], pt["enc_mu.bias"])
    logvar = ad.dense(tape, flat, pt["enc_logvar.weight"], pt["enc_logvar.bias"])
    return mu, logvar


def _decoder(tape: Tape, pt: dict[str, Tensor], z: Tensor) -> Tensor:
    h = ad.relu(tape, ad.dense(tape, z, pt["dec_dense.weight"], pt["dec_dense.bias"]))
    h = ad.reshape(tape, h, (32, 7, 7))
    h = ad.upsample2x(tape, h)
    h = ad.relu(tape, ad.conv2d(tape, h, pt["dec_conv1.kernel"], pt["dec_conv1.bias"], 1))
    h = ad.upsample2x(tape, h)
    h = ad.conv2d(tape, h, pt["dec_conv2.kernel"], pt["dec_conv2.bias"], 1)
    return ad.sigmoid(tape, h)


def encode(model: VaeModel, bitmap: GlyphBitmap) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic forward pass; returns (mu, logvar), each 5 reals."""
    tape = Tape()
    mu, logvar = _encoder(tape, _tensors(model.params),
                          Tensor(bitmap.pixels[None, :, :]))
    return mu.values.copy(), logvar.values.copy()


def decode(model: VaeModel, z) -> GlyphBitmap:
    """Decode a 5-D latent vector to a 28x28 image with values in (0, 1)."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (LATENT_DIM,) or not np.all(np.isfinite(z)):
        raise RangeError(f"latent vector must be {LATENT_DIM} finite reals")
    tape = Tape()
    out = _decoder(tape, _tensors(model.params), Tensor(z))
    return GlyphBitmap(out.values.reshape(28, 28))


def reparameterize(mu, logvar, noise) -> np.ndarray:
    """z = mu + exp(logvar / 2) * noise, with caller-supplied noise."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    return mu + np.exp(0.5 * logvar) * noise


def kl_divergence(mu, logvar) -> float:
    """KL of N(mu, e^logvar) from the standard normal prior, summed over dims."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    return float(-0.5 * np.sum(1.0 + logvar - mu * mu - np.exp(logvar)))


def reconstruction_loss(output: GlyphBitmap, target: GlyphBitmap) -> float:
    """Pixel-summed BCE with the prediction clamped to [1e-7, 1 - 1e-7]."""
    p = np.clip(output.pixels, 1e-7, 1.0 - 1e-7)
    t = target.pixels
    return float(-np.sum(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)))


def _sample_loss(params: dict[str, np.ndarray], pixels: np.ndarray,
                 noise: np.ndarray) -> tuple[Tape, dict[str, Tensor], Tensor, Tensor, Tensor]:
    """Forward pass for one training sample; returns tape and loss pieces."""
    tape = Tape()
    pt = _tensors(params)
    x = Tensor(pixels[None, :, :])
    mu, logvar = _encoder(tape, pt, x)
    sigma = ad.texp(tape, ad.scale(tape, logvar, 0.5))
    z = ad.add(tape, mu, ad.mul(tape, sigma, Tensor(noise)))
    out = _decoder(tape, pt, z)
    recon = ad.bce_sum(tape, out, x)
    kl = ad.kl_std_normal(tape, mu, logvar)
    loss = ad.add(tape, recon, kl)
    return tape, pt, loss, recon, kl


def _training_pixels(dataset) -> list[np.ndarray]:
    if isinstance(dataset, DatasetManifest):
        entries = sorted(dataset.ok_entries(), key=lambda e: e.font_id)
        return [load_glyph(dataset, e).pixels for e in entries]
    return [b.pixels if isinstance(b, GlyphBitmap) else np.asarray(b, dtype=np.float64)
            for b in dataset]


def train(dataset, config: TrainConfig,
          log_fn: Callable[[dict], None] | None = None) -> VaeModel:
    """Train on the ok entries of a manifest (or a bitmap list).

    Minimizes the batch-mean of BCE + KL with Adam; one seeded shuffle per
    epoch; gradient accumulation follows batch index order so a seed fully
    determines the resulting parameters.
    """
    pixels = _training_pixels(dataset)
    n = len(pixels)
    if n < 2:
        raise EmptyDataset(f"training needs at least 2 bitmaps, got {n}")

    rng = Rng(config.seed)
    params = init_params(rng)
    state = ad.init_adam_state(params)

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        sum_loss = sum_recon = sum_kl = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            inv = 1.0 / len(batch)
            grad_sum: dict[str, np.ndarray] = {}
            for idx in batch:
                noise = ad.gaussian_sample(rng, LATENT_DIM)
                tape, pt, loss, recon, kl = _sample_loss(params, pixels[idx], noise)
                grads = ad.backward(tape, loss)
                for name, tensor in pt.items():
                    g = grads.get(tensor)
                    if g is None:
                        continue
                    if name in grad_sum:
                        grad_sum[name] += g * inv
                    else:
                        grad_sum[name] = g * inv
                sum_loss += float(loss.values)
                sum_recon += float(recon.values)
                sum_kl += float(kl.values)
            params, state = ad.adam_step(params, grad_sum, state,
                                         lr=config.learning_rate)
        if log_fn is not None:
            log_fn({"epoch": epoch, "mean_loss": sum_loss / n,
                    "mean_recon": sum_recon / n, "mean_kl": sum_kl / n})

    hyper = {"latent_dim": LATENT_DIM, "layer_spec": LAYER_SPEC,
             "seed": config.seed, "epochs_completed": config.epochs}
    return VaeModel(params=params, hyper=hyper)


# --- slider mapping ----------------------------------------------------------

SLIDER_STEPS = 100  # positions 0..99 spanning the 5%..95% percentile band
_PPF_TABLE = None


def _slider_table() -> np.ndarray:
    global _PPF_TABLE
    if _PPF_TABLE is None:
        _PPF_TABLE = np.array([gaussian_ppf(0.05 + 0.90 * k / 99.0)
                               for k in range(SLIDER_STEPS)])
    return _PPF_TABLE


def slider_to_latent(sliders: Sequence[int]) -> np.ndarray:
    """Map five 0..99 slider positions through the normal percent point
    function over the 5%..95% band."""
    if len(sliders) != LATENT_DIM:
        raise RangeError(f"expected {LATENT_DIM} slider values, got {len(sliders)}")
    values = []
    for k in sliders:
        ki = int(k)
        if ki != k or not 0 <= ki <= 99:
            raise RangeError(f"slider value out of range 0..99: {k!r}")
        values.append(_slider_table()[ki])
    return np.array(values, dtype=np.float64)


# --- generated corpus --------------------------------------------------------

@dataclass
class GeneratedSample:
    index: int
    sliders: tuple[int, ...]
    latent: np.ndarray
    bitmap: GlyphBitmap | None  # None when reloaded lazily from disk

    @property
    def sample_id(self) -> str:
        return f"gen-{self.index:04d}"


def sample_generated_corpus(model: VaeModel, count: int = 1592,
                            seed: int = 7) -> list[GeneratedSample]:
    """Decode `count` distinct random slider positions (seeded).

    Slider vectors are drawn uniformly; duplicates by slider value are
    dropped and redrawn before decoding, so every entry is unique.
    """
    rng = Rng(seed)
    seen: set[tuple[int, ...]] = set()
    picks: list[tuple[int, ...]] = []
    while len(picks) < count:
        sliders = tuple(rng.randint(SLIDER_STEPS) for _ in range(LATENT_DIM))
        if sliders in seen:
            continue
        seen.add(sliders)
        picks.append(sliders)
    samples = []
    for i, sliders in enumerate(picks):
        latent = slider_to_latent(sliders)
        samples.append(GeneratedSample(index=i, sliders=sliders, latent=latent,
                                       bitmap=decode(model, latent)))
    return samples


# --- checkpoint format -------------------------------------------------------

def model_to_bytes(model: VaeModel) -> bytes:
    """Serialize: magic, version, JSON header, then f64 payloads in sorted
    tensor-name order. Byte-for-byte deterministic."""
    names = sorted(model.params)
    header = {
        "hyper": model.hyper,
        "tensors": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    blob += struct.pack("<I", len(header_bytes))
    blob += header_bytes
    for name in names:
        blob += np.ascontiguousarray(model.params[name], dtype="<f8").tobytes()
    return bytes(blob)


def model_from_bytes(data: bytes) -> VaeModel:
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    version, header_len = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    offset = 12
    try:
        header = json.loads(data[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    offset += header_len
    params: dict[str, np.ndarray] = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        size = int(np.prod(shape)) * 8
        chunk = data[offset:offset + size]
        if len(chunk) != size:
            raise CheckpointError("checkpoint payload truncated")
        params[spec["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += size
    if offset != len(data):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return VaeModel(params=params, hyper=header["hyper"])


def save_model(model: VaeModel, path: Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path: Path) -> VaeModel:
    return model_from_bytes(Path(path).read_bytes())
