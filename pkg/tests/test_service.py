import hashlib
import io
import json
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from fontmanifold.ingest import GlyphBitmap, from_training_bitmap, save_bitmap_png
from fontmanifold.manifold import TsneConfig, build_manifold_bundle, load_bundle
from fontmanifold.rng import Rng
from fontmanifold.service import (ServiceState, create_app,
                                  load_corpus_dir, render_png)
from fontmanifold.study import LabeledSample, PerceptionLabel, StudyStore
from fontmanifold.vae import (decode, sample_generated_corpus, save_model,
                              slider_to_latent)


class TestRenderPng:
    def test_lossless_round_trip(self):
        rng = np.random.default_rng(0)
        bitmap = GlyphBitmap(rng.uniform(0, 1, size=(28, 28)))
        png = render_png(bitmap, scale=1)
        decoded = np.asarray(Image.open(io.BytesIO(png)))
        assert decoded.shape == (28, 28)
        expected = np.floor((1.0 - bitmap.pixels) * 255.0 + 0.5).astype(np.uint8)
        assert np.array_equal(decoded, expected)

    def test_upscale_blocks(self):
        bitmap = GlyphBitmap(np.zeros((28, 28)))
        png = render_png(bitmap, scale=8)
        decoded = np.asarray(Image.open(io.BytesIO(png)))
        assert decoded.shape == (224, 224)
        assert (decoded == 255).all()   # zero ink renders white

    def test_ink_is_dark(self):
        bitmap = GlyphBitmap(np.ones((28, 28)))
        decoded = np.asarray(Image.open(io.BytesIO(render_png(bitmap))))
        assert (decoded == 0).all()

    def test_scale_bounds(self):
        from fontmanifold.errors import RangeError
        bitmap = GlyphBitmap(np.zeros((28, 28)))
        with pytest.raises(RangeError):
            render_png(bitmap, scale=0)
        with pytest.raises(RangeError):
            render_png(bitmap, scale=33)


@pytest.fixture(scope="module")
def service_env(tmp_path_factory, tiny_model):
    """Model file + corpus dir + manifold bundle + study data dir."""
    root = tmp_path_factory.mktemp("service")
    save_model(tiny_model, root / "model.pfmc")

    corpus_dir = root / "corpus"
    (corpus_dir / "bitmaps").mkdir(parents=True)
    samples = sample_generated_corpus(tiny_model, count=24, seed=21)
    with open(corpus_dir / "corpus.jsonl", "w", encoding="utf-8") as fh:
        for s in samples:
            rel = f"bitmaps/{s.sample_id}.png"
            save_bitmap_png(from_training_bitmap(s.bitmap), corpus_dir / rel)
            fh.write(json.dumps({"index": s.index, "sliders": list(s.sliders),
                                 "latent": [float(v) for v in s.latent],
                                 "bitmap_path": rel}, sort_keys=True) + "\n")

    # labeled samples: deliberately no POP so the pop heatmap is skipped
    rng = Rng(31)
    labeled = []
    for i in range(30):
        sliders = tuple(rng.randint(100) for _ in range(5))
        label = PerceptionLabel.FORMAL if i % 2 == 0 else PerceptionLabel.CASUAL
        labeled.append(LabeledSample(sample_id=f"l{i:03d}", session_id="s",
                                     timestamp_ms=i, sliders=sliders,
                                     latent=slider_to_latent(sliders), label=label))
    bundle_dir = root / "bundle"
    build_manifold_bundle(labeled, TsneConfig(seed=7, iterations=300), bundle_dir)
    return {"root": root, "corpus_dir": corpus_dir, "bundle_dir": bundle_dir}


@pytest.fixture()
def client(service_env, tiny_model, tmp_path):
    ticks = iter(range(1, 1_000_000))
    state = ServiceState(model=tiny_model,
                         store=StudyStore(tmp_path / "data",
                                          clock=lambda: next(ticks)),
                         bundle=load_bundle(service_env["bundle_dir"]),
                         corpus=load_corpus_dir(service_env["corpus_dir"]))
    return TestClient(create_app(state)), state


class TestDecodeEndpoint:
    def test_repeat_is_byte_identical(self, client):
        c, _ = client
        a = c.get("/api/decode?sliders=50,50,50,50,50")
        b = c.get("/api/decode?sliders=50,50,50,50,50")
        assert a.status_code == 200
        assert a.headers["content-type"] == "image/png"
        assert a.content == b.content

    def test_slider_extremes_match_ppf_band(self, client, tiny_model):
        c, _ = client
        for sliders, endpoint in ((("0," * 5)[:-1], -1.6448536),
                                  (("99," * 5)[:-1], 1.6448536)):
            response = c.get(f"/api/decode?sliders={sliders}")
            direct = decode(tiny_model, np.full(5, endpoint))
            served = np.asarray(Image.open(io.BytesIO(response.content)))
            expected = np.floor((1.0 - direct.pixels) * 255.0 + 0.5).astype(np.uint8)
            assert np.abs(served.astype(int) - expected.astype(int)).max() <= 1

    def test_out_of_range_slider_is_400(self, client):
        c, _ = client
        response = c.get("/api/decode?sliders=100,0,0,0,0")
        assert response.status_code == 400
        assert "slider out of range" in response.json()["error"]

    def test_z_query(self, client):
        c, _ = client
        response = c.get("/api/decode?z=0.1,-0.5,0,1.0,-1.2&scale=2")
        assert response.status_code == 200
        img = Image.open(io.BytesIO(response.content))
        assert img.size == (56, 56)

    def test_needs_exactly_one_input(self, client):
        c, _ = client
        assert c.get("/api/decode").status_code == 400
        assert c.get("/api/decode?sliders=1,1,1,1,1&z=0,0,0,0,0").status_code == 400

    def test_malformed_values(self, client):
        c, _ = client
        assert c.get("/api/decode?sliders=a,b,c,d,e").status_code == 400
        assert c.get("/api/decode?z=1,2").status_code == 400


class TestManifoldEndpoints:
    def test_manifold_payload(self, client):
        c, _ = client
        response = c.get("/api/manifold?label=all")
        assert response.status_code == 200
        body = response.json()
        assert len(body["points"]) == 30
        assert body["heatmap"] == "/api/heatmap?label=all"
        assert set(body["bounds"]) == {"x_min", "x_max", "y_min", "y_max"}
        assert {p["label"] for p in body["points"]} == {"Formal", "Casual"}

    def test_heatmap_png(self, client):
        c, _ = client
        response = c.get("/api/heatmap?label=formal")
        assert response.status_code == 200
        img = Image.open(io.BytesIO(response.content))
        assert img.size == (256, 256)

    def test_empty_pop_manifold_is_404(self, client):
        c, _ = client
        assert c.get("/api/manifold?label=pop").status_code == 404
        assert c.get("/api/heatmap?label=pop").status_code == 404

    def test_unknown_label_is_400(self, client):
        c, _ = client
        assert c.get("/api/manifold?label=spicy").status_code == 400

    def test_locate_exact_sample(self, client):
        c, state = client
        sample = state.bundle.samples[4]
        body = {"x": float(sample.coords[0]), "y": float(sample.coords[1]),
                "label": "all"}
        response = c.post("/api/locate", json=body)
        assert response.status_code == 200
        payload = response.json()
        assert np.allclose(payload["z"], sample.latent, atol=0)
        image = c.get(payload["image"])
        assert image.status_code == 200
        again = c.post("/api/locate", json=body).json()
        assert again == payload

    def test_locate_malformed(self, client):
        c, _ = client
        assert c.post("/api/locate", json={"x": "wat"}).status_code == 400
        assert c.post("/api/locate", content=b"{not json").status_code == 400


class TestStudyEndpoints:
    def test_session_label_flow(self, client):
        c, state = client
        created = c.post("/api/sessions", json={"participant": "p1"})
        assert created.status_code == 200
        session_id = created.json()["session_id"]

        response = c.post("/api/labels", json={"session_id": session_id,
                                               "sliders": [10, 20, 30, 40, 50],
                                               "label": "POP"})
        assert response.status_code == 200
        stored = response.json()
        assert stored["sliders"] == [10, 20, 30, 40, 50]
        assert stored["label"] == "POP"
        assert len(state.store.load_labels()) == 1

    def test_label_slider_out_of_range(self, client):
        c, _ = client
        session_id = c.post("/api/sessions", json={}).json()["session_id"]
        response = c.post("/api/labels", json={"session_id": session_id,
                                               "sliders": [100, 0, 0, 0, 0],
                                               "label": "POP"})
        assert response.status_code == 400

    def test_label_unknown_session_404(self, client):
        c, _ = client
        response = c.post("/api/labels", json={"session_id": "sess-void",
                                               "sliders": [0, 0, 0, 0, 0],
                                               "label": "POP"})
        assert response.status_code == 404

    def test_report_without_records_is_409(self, client):
        c, _ = client
        response = c.get("/api/report")
        assert response.status_code == 409
        assert "insufficient" in response.json()["error"]


class TestTaskEndpoints:
    def _create_tasks(self, state):
        corpus = state.corpus
        generated = []
        from fontmanifold.vae import GeneratedSample
        for e in corpus:
            generated.append(GeneratedSample(index=e.index, sliders=e.sliders,
                                             latent=e.latent, bitmap=None))
        state.store.create_tasks(generated, count=3, seed=13)

    def test_next_answer_flow(self, client):
        c, state = client
        self._create_tasks(state)
        nxt = c.get("/api/tasks/next?interface=grid&participant=p9")
        assert nxt.status_code == 200
        task = nxt.json()["task"]
        assert task["interface"] == "grid"

        target_index = int(task["target_image"].split("/")[-1].split(".")[0])
        answer = c.post(f"/api/tasks/{task['task_id']}/answer",
                        json={"selected": {"corpus_index": target_index},
                              "elapsed_ms": 2400, "participant": "p9"})
        assert answer.status_code == 200
        record = answer.json()
        assert record["ssim"] == 1.0
        assert record["participant_id"] == "p9"

        repeat = c.post(f"/api/tasks/{task['task_id']}/answer",
                        json={"selected": {"corpus_index": 0}, "elapsed_ms": 10})
        assert repeat.status_code == 409

    def test_answer_with_z_reference(self, client, tiny_model):
        c, state = client
        self._create_tasks(state)
        task = c.get("/api/tasks/next?interface=manifold").json()["task"]
        z = [0.0, 0.0, 0.0, 0.0, 0.0]
        answer = c.post(f"/api/tasks/{task['task_id']}/answer",
                        json={"selected": {"z": z}, "elapsed_ms": 900})
        assert answer.status_code == 200
        assert 0.0 <= answer.json()["ssim"] <= 1.0

    def test_unknown_task_404(self, client):
        c, _ = client
        response = c.post("/api/tasks/task-void/answer",
                          json={"selected": {"corpus_index": 0}, "elapsed_ms": 5})
        assert response.status_code == 404

    def test_tasks_exhaust_to_null(self, client):
        c, state = client
        self._create_tasks(state)
        answered = 0
        while True:
            payload = c.get("/api/tasks/next?interface=grid").json()
            if payload["task"] is None:
                break
            task = payload["task"]
            index = int(task["target_image"].split("/")[-1].split(".")[0])
            c.post(f"/api/tasks/{task['task_id']}/answer",
                   json={"selected": {"corpus_index": index},
                         "elapsed_ms": 100 + answered})
            answered += 1
        assert answered == 3

    def test_report_after_both_arms(self, client):
        c, state = client
        self._create_tasks(state)
        times = {"grid": iter((900, 1000, 1100)), "manifold": iter((400, 500, 600))}
        for interface in ("grid", "manifold"):
            for _ in range(3):
                task = c.get(f"/api/tasks/next?interface={interface}").json()["task"]
                index = int(task["target_image"].split("/")[-1].split(".")[0])
                c.post(f"/api/tasks/{task['task_id']}/answer",
                       json={"selected": {"corpus_index": index},
                             "elapsed_ms": next(times[interface])})
        report = c.get("/api/report")
        assert report.status_code == 200
        body = report.json()
        assert body["time_ratio_grid_over_manifold"] == 2.0
        assert body["interfaces"]["grid"]["ssim"]["mean"] == 1.0
        assert set(body["elapsed_ttest"]) == {"t", "df", "p"}

    def test_report_constant_times_degrades_gracefully(self, client):
        c, state = client
        self._create_tasks(state)
        for interface in ("grid", "manifold"):
            for _ in range(2):
                task = c.get(f"/api/tasks/next?interface={interface}").json()["task"]
                index = int(task["target_image"].split("/")[-1].split(".")[0])
                c.post(f"/api/tasks/{task['task_id']}/answer",
                       json={"selected": {"corpus_index": index},
                             "elapsed_ms": 1000 if interface == "grid" else 500})
        body = c.get("/api/report").json()
        assert body["elapsed_ttest"]["status"] == "insufficient"


class TestGridEndpoints:
    def test_paging_covers_corpus_once(self, client):
        c, state = client
        total = len(state.corpus)
        seen = []
        offset = 0
        while True:
            page = c.get(f"/api/grid?offset={offset}&limit=10").json()
            assert page["total"] == total
            if not page["items"]:
                break
            seen.extend(item["index"] for item in page["items"])
            offset += 10
        assert seen == list(range(total))

    def test_corpus_image_served(self, client):
        c, _ = client
        response = c.get("/api/corpus/0.png")
        assert response.status_code == 200
        img = Image.open(io.BytesIO(response.content))
        assert img.size == (28, 28)

    def test_corpus_index_out_of_range(self, client):
        c, _ = client
        assert c.get("/api/corpus/999.png").status_code == 400

    def test_bad_paging_params(self, client):
        c, _ = client
        assert c.get("/api/grid?offset=-1&limit=10").status_code == 400
        assert c.get("/api/grid?offset=0&limit=0").status_code == 400


class TestStateImmutability:
    def test_scripted_session_leaves_model_and_manifold_untouched(
            self, client, service_env):
        c, state = client

        def hash_tree(root: Path) -> dict:
            return {str(p.relative_to(root)):
                    hashlib.sha256(p.read_bytes()).hexdigest()
                    for p in sorted(Path(root).rglob("*")) if p.is_file()}

        before = {name: hash_tree(service_env[name])
                  for name in ("corpus_dir", "bundle_dir")}
        before["model"] = hashlib.sha256(
            (service_env["root"] / "model.pfmc").read_bytes()).hexdigest()

        session_id = c.post("/api/sessions", json={"participant": "px"}).json()["session_id"]
        c.get("/api/decode?sliders=1,2,3,4,5")
        c.post("/api/labels", json={"session_id": session_id,
                                    "sliders": [1, 2, 3, 4, 5], "label": "Casual"})
        sample = state.bundle.samples[0]
        c.post("/api/locate", json={"x": float(sample.coords[0]),
                                    "y": float(sample.coords[1]), "label": "all"})
        c.get("/api/grid?offset=0&limit=5")
        c.get("/api/heatmap?label=all")

        after = {name: hash_tree(service_env[name])
                 for name in ("corpus_dir", "bundle_dir")}
        after["model"] = hashlib.sha256(
            (service_env["root"] / "model.pfmc").read_bytes()).hexdigest()
        assert before == after

    def test_get_idempotent_while_logs_unchanged(self, client):
        c, _ = client
        for url in ("/api/manifold?label=all", "/api/heatmap?label=formal",
                    "/api/grid?offset=0&limit=4", "/api/corpus/1.png"):
            assert c.get(url).content == c.get(url).content
