"""HTTP service exposing the trained model, manifold, and study workflows.

The model and manifold bundle are loaded once at startup and never mutate;
only the study logs grow. Rendered PNGs are cached under a content hash so
repeated slider positions and clicks stay cheap.
"""
from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from PIL import Image

from . import errors as err
from .ingest import GlyphBitmap, DatasetManifest, load_glyph, load_bitmap_png, to_training_bitmap
from .manifold import LABEL_FILTERS, ManifoldBundle, load_bundle, locate_latent
from .metrics import analyze_comparison
from .study import StudyStore
from .vae import LATENT_DIM, VaeModel, decode, load_model, slider_to_latent

MAX_SCALE = 32

_STATUS_BY_ERROR = {
    err.RangeError: 400,
    err.DomainError: 400,
    err.DimensionError: 400,
    err.UnknownSession: 404,
    err.UnknownTask: 404,
    err.EmptySelection: 404,
    err.AlreadyAnswered: 409,
    err.MissingInterface: 409,
    err.DegenerateData: 409,
}


def render_png(bitmap: GlyphBitmap, scale: int = 1) -> bytes:
    """8-bit grayscale PNG with ink dark: intensity = (1 - v) * 255, rounded,
    nearest-neighbor upscaled."""
    if not 1 <= scale <= MAX_SCALE:
        raise err.RangeError(f"scale must be in 1..{MAX_SCALE}, got {scale}")
    gray = np.floor((1.0 - bitmap.pixels) * 255.0 + 0.5).astype(np.uint8)
    if scale > 1:
        gray = gray.repeat(scale, axis=0).repeat(scale, axis=1)
    buf = io.BytesIO()
    Image.fromarray(gray, mode="L").save(buf, format="PNG")
    return buf.getvalue()


@dataclass
class CorpusEntry:
    index: int
    sliders: tuple[int, ...]
    latent: np.ndarray
    png_path: Path

    @property
    def sample_id(self) -> str:
        return f"gen-{self.index:04d}"


def load_corpus_dir(corpus_dir: Path) -> list[CorpusEntry]:
    """Read a generated-corpus directory written by the `sample` subcommand."""
    corpus_dir = Path(corpus_dir)
    entries = []
    try:
        with open(corpus_dir / "corpus.jsonl", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                entries.append(CorpusEntry(
                    index=int(obj["index"]),
                    sliders=tuple(int(v) for v in obj["sliders"]),
                    latent=np.array(obj["latent"], dtype=np.float64),
                    png_path=corpus_dir / obj["bitmap_path"]))
    except OSError as exc:
        raise err.IoError(f"cannot read corpus {corpus_dir}: {exc}") from exc
    entries.sort(key=lambda e: e.index)
    return entries


@dataclass
class ServiceState:
    model: VaeModel
    store: StudyStore
    bundle: ManifoldBundle | None = None
    corpus: list[CorpusEntry] | None = None
    dataset: DatasetManifest | None = None
    image_cache: dict[str, bytes] = field(default_factory=dict)

    def corpus_bitmap(self, index: int) -> GlyphBitmap:
        if self.corpus is None:
            raise err.EmptySelection("no generated corpus loaded")
        if not 0 <= index < len(self.corpus):
            raise err.RangeError(f"corpus index out of range: {index}")
        return to_training_bitmap(load_bitmap_png(self.corpus[index].png_path))

    def resolve_bitmap(self, ref: dict) -> GlyphBitmap:
        """Turn an image reference into a bitmap: generated-corpus index,
        latent vector, slider vector, or dataset font id."""
        if not isinstance(ref, dict):
            raise err.DomainError("image reference must be an object")
        if "corpus_index" in ref:
            return self.corpus_bitmap(int(ref["corpus_index"]))
        if "z" in ref:
            return decode(self.model, np.asarray(ref["z"], dtype=np.float64))
        if "sliders" in ref:
            return decode(self.model, slider_to_latent(ref["sliders"]))
        if "font_id" in ref:
            if self.dataset is None:
                raise err.EmptySelection("no font dataset loaded")
            for entry in self.dataset.ok_entries():
                if entry.font_id == ref["font_id"]:
                    return load_glyph(self.dataset, entry)
            raise err.EmptySelection(f"unknown font_id {ref['font_id']!r}")
        raise err.DomainError(f"unrecognized image reference: {sorted(ref)}")

    def cache_png(self, bitmap: GlyphBitmap, scale: int) -> tuple[str, bytes]:
        gray = np.floor((1.0 - bitmap.pixels) * 255.0 + 0.5).astype(np.uint8)
        key = hashlib.sha256(gray.tobytes() + bytes([scale])).hexdigest()[:24]
        if key not in self.image_cache:
            self.image_cache[key] = render_png(bitmap, scale)
        return key, self.image_cache[key]


def _parse_floats(text: str, n: int, what: str) -> np.ndarray:
    parts = [p for p in text.split(",") if p != ""]
    if len(parts) != n:
        raise err.DomainError(f"{what} needs {n} comma-separated values")
    try:
        values = np.array([float(p) for p in parts], dtype=np.float64)
    except ValueError as exc:
        raise err.DomainError(f"malformed {what}: {exc}") from exc
    if not np.all(np.isfinite(values)):
        raise err.DomainError(f"{what} must be finite")
    return values


def _parse_sliders(text: str) -> list[int]:
    parts = [p for p in text.split(",") if p != ""]
    if len(parts) != LATENT_DIM:
        raise err.RangeError(f"sliders need {LATENT_DIM} comma-separated integers")
    try:
        values = [int(p) for p in parts]
    except ValueError as exc:
        raise err.RangeError(f"malformed sliders: {exc}") from exc
    if any(not 0 <= v <= 99 for v in values):
        raise err.RangeError("slider out of range")
    return values


def _label_filter(label: str):
    key = (label or "all").lower()
    if key not in LABEL_FILTERS:
        raise err.RangeError(f"unknown label {label!r}")
    return key, LABEL_FILTERS[key]


def create_app(state: ServiceState, app_dir: Path | None = None) -> FastAPI:
    app = FastAPI(title="fontmanifold", docs_url=None, redoc_url=None)

    @app.exception_handler(err.FontManifoldError)
    async def _domain_error(_request: Request, exc: err.FontManifoldError):
        status = 400
        for klass, code in _STATUS_BY_ERROR.items():
            if isinstance(exc, klass):
                status = code
                break
        return JSONResponse(status_code=status, content={"error": str(exc)})

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    def png_response(body: bytes) -> Response:
        return Response(content=body, media_type="image/png")

    @app.get("/api/health")
    def health():
        return {"status": "ok"}

    @app.get("/api/decode")
    def api_decode(sliders: str | None = None, z: str | None = None, scale: int = 1):
        if (sliders is None) == (z is None):
            raise err.DomainError("pass exactly one of ?sliders= or ?z=")
        if sliders is not None:
            latent = slider_to_latent(_parse_sliders(sliders))
        else:
            latent = _parse_floats(z, LATENT_DIM, "z")
        bitmap = decode(state.model, latent)
        _, body = state.cache_png(bitmap, scale)
        return png_response(body)

    @app.get("/api/manifold")
    def api_manifold(label: str = "all"):
        if state.bundle is None:
            raise err.EmptySelection("no manifold bundle loaded")
        key, filt = _label_filter(label)
        points = [{"x": float(s.coords[0]), "y": float(s.coords[1]),
                   "label": s.label.value, "id": s.sample_id}
                  for s in state.bundle.samples
                  if filt is None or s.label == filt]
        if not points:
            raise err.EmptySelection(f"no samples for perception {key!r}")
        return {"points": points, "heatmap": f"/api/heatmap?label={key}",
                "bounds": state.bundle.bounds.to_obj()}

    @app.get("/api/heatmap")
    def api_heatmap(label: str = "all"):
        if state.bundle is None:
            raise err.EmptySelection("no manifold bundle loaded")
        key, _ = _label_filter(label)
        path = state.bundle.heatmap_png(key)
        if path is None or not path.exists():
            raise err.EmptySelection(f"no heatmap for perception {key!r}")
        return png_response(path.read_bytes())

    @app.post("/api/locate")
    async def api_locate(request: Request):
        body = await _json_body(request)
        if state.bundle is None:
            raise err.EmptySelection("no manifold bundle loaded")
        try:
            x = float(body["x"])
            y = float(body["y"])
        except (KeyError, TypeError, ValueError) as exc:
            raise err.DomainError(f"locate needs numeric x and y: {exc}") from exc
        _, filt = _label_filter(str(body.get("label", "all")))
        latent = locate_latent((x, y), state.bundle.samples, filt)
        bitmap = decode(state.model, latent)
        scale = int(body.get("scale", 8))
        key, _bytes = state.cache_png(bitmap, scale)
        return {"z": [float(v) for v in latent], "image": f"/api/image/{key}.png"}

    @app.get("/api/image/{key}.png")
    def api_image(key: str):
        body = state.image_cache.get(key)
        if body is None:
            raise err.EmptySelection(f"no cached image {key!r}")
        return png_response(body)

    @app.get("/api/corpus/{index}.png")
    def api_corpus_image(index: int, scale: int = 1):
        bitmap = state.corpus_bitmap(index)
        _, body = state.cache_png(bitmap, scale)
        return png_response(body)

    @app.get("/api/grid")
    def api_grid(offset: int = 0, limit: int = 50):
        if state.corpus is None:
            raise err.EmptySelection("no generated corpus loaded")
        if offset < 0 or limit < 1:
            raise err.RangeError("offset must be >= 0 and limit >= 1")
        page = state.corpus[offset:offset + limit]
        return {"total": len(state.corpus), "offset": offset,
                "items": [{"id": e.sample_id, "index": e.index,
                           "image": f"/api/corpus/{e.index}.png"} for e in page]}

    @app.post("/api/sessions")
    async def api_create_session(request: Request):
        body = await _json_body(request, allow_empty=True)
        participant = str(body.get("participant", "anonymous"))
        session = state.store.create_session(participant)
        return {"session_id": session.session_id,
                "started_at_ms": session.started_at_ms,
                "duration_budget_s": session.duration_budget_s}

    @app.post("/api/labels")
    async def api_submit_label(request: Request):
        body = await _json_body(request)
        try:
            session_id = body["session_id"]
            sliders = body["sliders"]
            label = body["label"]
        except KeyError as exc:
            raise err.DomainError(f"label submission missing field {exc}") from exc
        sample = state.store.record_label(session_id, sliders, label)
        return json.loads(sample.to_json())

    @app.get("/api/tasks/next")
    def api_next_task(interface: str, participant: str = "anonymous"):
        if interface not in ("manifold", "grid"):
            raise err.RangeError(f"unknown interface {interface!r}")
        task = state.store.next_task(interface)
        if task is None:
            return {"task": None}
        return {"task": {"task_id": task.task_id, "interface": task.interface,
                         "target_id": task.target_id,
                         "target_image": f"/api/corpus/{task.target_index}.png",
                         "issued_at_ms": task.issued_at_ms},
                "participant": participant}

    @app.post("/api/tasks/{task_id}/answer")
    async def api_answer(task_id: str, request: Request):
        body = await _json_body(request)
        try:
            selected = body["selected"]
            elapsed_ms = int(body["elapsed_ms"])
        except (KeyError, TypeError, ValueError) as exc:
            raise err.DomainError(f"answer needs selected and elapsed_ms: {exc}") from exc
        participant = str(body.get("participant", "anonymous"))
        record = state.store.answer_task(task_id, selected, elapsed_ms,
                                         state.resolve_bitmap, participant)
        return json.loads(record.to_json())

    @app.get("/api/report")
    def api_report():
        records = state.store.load_records()
        try:
            return analyze_comparison(records)
        except err.MissingInterface as exc:
            raise err.MissingInterface(f"insufficient data: {exc}") from exc

    if app_dir is not None and Path(app_dir).is_dir():
        app.mount("/app", StaticFiles(directory=str(app_dir), html=True), name="app")

    return app


async def _json_body(request: Request, allow_empty: bool = False) -> dict:
    raw = await request.body()
    if not raw:
        if allow_empty:
            return {}
        raise err.DomainError("request body must be JSON")
    try:
        body = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise err.DomainError(f"malformed JSON body: {exc}") from exc
    if not isinstance(body, dict):
        raise err.DomainError("JSON body must be an object")
    return body


def build_state(model_path: Path, data_dir: Path,
                manifold_dir: Path | None = None,
                corpus_dir: Path | None = None,
                dataset_dir: Path | None = None) -> ServiceState:
    from .ingest import load_manifest

    model = load_model(model_path)
    store = StudyStore(Path(data_dir))
    bundle = load_bundle(manifold_dir) if manifold_dir else None
    corpus = load_corpus_dir(corpus_dir) if corpus_dir else None
    dataset = load_manifest(Path(dataset_dir)) if dataset_dir else None
    return ServiceState(model=model, store=store, bundle=bundle,
                        corpus=corpus, dataset=dataset)


def run_service(state: ServiceState, port: int, app_dir: Path | None = None) -> None:
    import uvicorn

    uvicorn.run(create_app(state, app_dir=app_dir), host="127.0.0.1", port=port)
