"""Pipeline driver: one subcommand per stage, batch-friendly and seeded.

Exit codes: 0 success, 1 domain error, 2 usage error. Logs go to stderr,
artifacts to the --out target, and every run drops its fully resolved
configuration next to its outputs as <subcommand>.config.json.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import manifold as mf
from . import metrics, study, vae
from .errors import FontManifoldError
from .ingest import (ingest_corpus, from_training_bitmap, load_bitmap_png,
                     load_manifest, save_bitmap_png, to_training_bitmap)
from .rng import Rng
from .service import build_state, render_png, run_service
from .study import StudyStore, SynthesisThresholds, synthesize_labels
from .vae import TrainConfig, load_model, sample_generated_corpus, save_model, train

log = logging.getLogger("fontmanifold")

DEFAULT_SEED = 7


def _write_run_config(out_target: Path, subcommand: str, config: dict) -> None:
    out_dir = out_target if out_target.is_dir() else out_target.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{subcommand}.config.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"subcommand": subcommand, **config}, fh,
                  ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")


def _cmd_ingest(args) -> int:
    out = Path(args.out)
    manifest = ingest_corpus(Path(args.fonts), out, codepoint=args.codepoint)
    ok = len(manifest.ok_entries())
    skipped = len(manifest.entries) - ok
    if not manifest.entries:
        log.warning("no font files found under %s", args.fonts)
    log.info("ingested %d fonts (%d ok, %d skipped) -> %s", len(manifest.entries),
             ok, skipped, out)
    _write_run_config(out, "ingest", {"fonts": str(args.fonts), "out": str(out),
                                      "codepoint": args.codepoint})
    return 0


def _cmd_train(args) -> int:
    out = Path(args.out)
    manifest = load_manifest(Path(args.dataset))
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch,
                         learning_rate=args.lr, seed=args.seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = out.with_suffix(out.suffix + ".log.jsonl")
    with open(log_path, "w", encoding="utf-8") as fh:
        def log_epoch(entry: dict) -> None:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
            log.info("epoch %d: loss=%.3f recon=%.3f kl=%.3f", entry["epoch"],
                     entry["mean_loss"], entry["mean_recon"], entry["mean_kl"])
        model = train(manifest, config, log_fn=log_epoch)
    save_model(model, out)
    log.info("checkpoint written to %s", out)
    _write_run_config(out, "train", {"dataset": str(args.dataset), "out": str(out),
                                     "epochs": args.epochs, "batch": args.batch,
                                     "lr": args.lr, "seed": args.seed})
    return 0


def _parse_csv_ints(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part != ""]


def _cmd_decode(args) -> int:
    model = load_model(Path(args.model))
    if (args.sliders is None) == (args.z is None):
        raise FontManifoldError("pass exactly one of --sliders or --z")
    if args.sliders is not None:
        latent = vae.slider_to_latent(_parse_csv_ints(args.sliders))
    else:
        latent = np.array([float(p) for p in args.z.split(",") if p != ""],
                          dtype=np.float64)
    bitmap = vae.decode(model, latent)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(render_png(bitmap, scale=args.scale))
    log.info("decoded image written to %s (z=%s)", out,
             "[" + ",".join(f"{v:.4f}" for v in latent) + "]")
    _write_run_config(out, "decode", {"model": str(args.model), "out": str(out),
                                      "sliders": args.sliders, "z": args.z,
                                      "scale": args.scale})
    return 0


def _cmd_sample(args) -> int:
    model = load_model(Path(args.model))
    out = Path(args.out)
    (out / "bitmaps").mkdir(parents=True, exist_ok=True)
    samples = sample_generated_corpus(model, count=args.count, seed=args.seed)
    with open(out / "corpus.jsonl", "w", encoding="utf-8") as fh:
        for s in samples:
            rel = f"bitmaps/{s.sample_id}.png"
            save_bitmap_png(from_training_bitmap(s.bitmap), out / rel)
            fh.write(json.dumps({"index": s.index, "sliders": list(s.sliders),
                                 "latent": [float(v) for v in s.latent],
                                 "bitmap_path": rel},
                                ensure_ascii=False, sort_keys=True) + "\n")
    log.info("generated corpus of %d images -> %s", len(samples), out)
    _write_run_config(out, "sample", {"model": str(args.model), "out": str(out),
                                      "count": args.count, "seed": args.seed})
    return 0


def _probe_thresholds(model: vae.VaeModel, seed: int, draws: int) -> SynthesisThresholds:
    """Desk-scale calibration: quantiles of decoded ink/slant statistics so
    every synthetic label bucket is reachable for this particular model."""
    rng = Rng(seed ^ 0x5EED)
    inks, slants = [], []
    for _ in range(draws):
        bitmap = vae.decode(model, vae.slider_to_latent(study.random_start(rng)))
        inks.append(study.ink_ratio(bitmap))
        slants.append(abs(study.centroid_slant(bitmap)))
    return SynthesisThresholds(pop_ink=float(np.percentile(inks, 65)),
                               formal_ink=float(np.percentile(inks, 35)),
                               formal_slant=float(np.percentile(slants, 75)))


def _cmd_synth_labels(args) -> int:
    model = load_model(Path(args.model))
    if args.auto_thresholds > 0:
        thresholds = _probe_thresholds(model, args.seed, args.auto_thresholds)
        log.info("calibrated thresholds: pop_ink=%.4f formal_ink=%.4f formal_slant=%.4f",
                 thresholds.pop_ink, thresholds.formal_ink, thresholds.formal_slant)
    else:
        thresholds = SynthesisThresholds(pop_ink=args.pop_ink,
                                         formal_ink=args.formal_ink,
                                         formal_slant=args.formal_slant)
    samples = synthesize_labels(model, per_label=args.per_label, seed=args.seed,
                                thresholds=thresholds, max_draws=args.max_draws)
    out = Path(args.out)
    store = StudyStore(out)
    store.append_labels(samples)
    log.info("wrote %d synthetic labels -> %s", len(samples), store.labels_path)
    _write_run_config(out, "synth-labels",
                      {"model": str(args.model), "out": str(out),
                       "per_label": args.per_label, "seed": args.seed,
                       "pop_ink": thresholds.pop_ink,
                       "formal_ink": thresholds.formal_ink,
                       "formal_slant": thresholds.formal_slant,
                       "max_draws": args.max_draws,
                       "auto_thresholds": args.auto_thresholds})
    return 0


def _cmd_manifold(args) -> int:
    store = StudyStore(Path(args.labels).parent if Path(args.labels).is_file()
                       else Path(args.labels))
    labeled = store.load_labels()
    config = mf.TsneConfig(perplexity=args.perplexity, iterations=args.iterations,
                           seed=args.seed)
    out = Path(args.out)
    bundle = mf.build_manifold_bundle(labeled, config, out)
    log.info("manifold bundle with %d samples -> %s", len(bundle.samples), out)
    _write_run_config(out, "manifold", {"labels": str(args.labels), "out": str(out),
                                        "perplexity": args.perplexity,
                                        "iterations": args.iterations,
                                        "seed": args.seed})
    return 0


def _cmd_heatmap(args) -> int:
    bundle_dir = Path(args.bundle)
    key = args.label.lower()
    if key not in mf.LABEL_FILTERS:
        raise FontManifoldError(f"unknown label {args.label!r}")
    grid = mf.read_heatmap_f64(bundle_dir / f"heatmap_{key}.f64")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    mf.heatmap_to_image(grid).save(out, format="PNG")
    log.info("heatmap %s re-rendered -> %s", key, out)
    _write_run_config(out, "heatmap", {"bundle": str(bundle_dir), "label": key,
                                       "out": str(out)})
    return 0


def _cmd_match(args) -> int:
    manifest = load_manifest(Path(args.dataset))
    query = to_training_bitmap(load_bitmap_png(Path(args.query)))
    result = metrics.match_closest_font(query, manifest)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = {"font_id": result.font_id, "ssim": result.ssim}
    if args.alphabet_out:
        entry = next(e for e in manifest.ok_entries() if e.font_id == result.font_id)
        strip = metrics.render_alphabet(Path(entry.source_file).read_bytes())
        from PIL import Image
        Image.fromarray(strip.image, mode="L").save(args.alphabet_out, format="PNG")
        payload["alphabet"] = str(args.alphabet_out)
        payload["missing_letters"] = [letter for letter, _ in strip.missing]
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")
    log.info("closest font: %s (ssim %.6f)", result.font_id, result.ssim)
    _write_run_config(out, "match", {"query": str(args.query),
                                     "dataset": str(args.dataset), "out": str(out),
                                     "alphabet_out": args.alphabet_out})
    return 0


def _cmd_analyze(args) -> int:
    records_path = Path(args.records)
    records = []
    with open(records_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(metrics.ComparisonRecord.from_obj(json.loads(line)))
    report = metrics.analyze_comparison(records)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")
    log.info("analysis report -> %s", out)
    _write_run_config(out, "analyze", {"records": str(records_path), "out": str(out)})
    return 0


def _cmd_serve(args) -> int:
    state = build_state(model_path=Path(args.model), data_dir=Path(args.data_dir),
                        manifold_dir=Path(args.manifold) if args.manifold else None,
                        corpus_dir=Path(args.corpus) if args.corpus else None,
                        dataset_dir=Path(args.dataset) if args.dataset else None)
    if args.tasks > 0 and state.corpus is not None and not state.store.load_tasks():
        generated = [vae.GeneratedSample(index=e.index, sliders=e.sliders,
                                         latent=e.latent, bitmap=None)
                     for e in state.corpus]
        state.store.create_tasks(generated, count=args.tasks, seed=args.seed)
        log.info("created %d comparison tasks (%d per interface)", 2 * args.tasks,
                 args.tasks)
    port = args.port if args.port is not None else int(os.environ.get("FM_PORT", "8765"))
    log.info("serving on http://127.0.0.1:%d", port)
    run_service(state, port=port,
                app_dir=Path(args.app_dir) if args.app_dir else None)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fontmanifold",
        description="Perceptual font manifold pipeline: ingest fonts, train the "
                    "VAE, build manifolds, and serve the exploration interface.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("ingest", help="rasterize and cleanse a font directory")
    p.add_argument("--fonts", required=True, help="directory of .ttf/.otf files")
    p.add_argument("--out", required=True, help="dataset output directory")
    p.add_argument("--codepoint", type=int, default=0x41,
                   help="Unicode codepoint to rasterize (default: U+0041)")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("train", help="train the VAE on an ingested dataset")
    p.add_argument("--dataset", required=True, help="dataset dir or manifest.jsonl")
    p.add_argument("--out", required=True, help="checkpoint output path (.pfmc)")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("decode", help="decode sliders or a latent vector to a PNG")
    p.add_argument("--model", required=True)
    p.add_argument("--sliders", help="five comma-separated integers 0..99")
    p.add_argument("--z", help="five comma-separated latent values")
    p.add_argument("--scale", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("sample", help="decode a seeded generated corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--count", type=int, default=1592)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", required=True, help="corpus output directory")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("synth-labels", help="generate synthetic perception labels")
    p.add_argument("--model", required=True)
    p.add_argument("--per-label", type=int, default=100)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", required=True, help="study data directory")
    p.add_argument("--pop-ink", type=float, default=0.28)
    p.add_argument("--formal-ink", type=float, default=0.18)
    p.add_argument("--formal-slant", type=float, default=1.0)
    p.add_argument("--max-draws", type=int, default=1_000_000)
    p.add_argument("--auto-thresholds", type=int, default=0, metavar="N",
                   help="probe N decodes and derive thresholds from quantiles")
    p.set_defaults(func=_cmd_synth_labels)

    p = sub.add_parser("manifold", help="t-SNE + KDE bundle from labeled samples")
    p.add_argument("--labels", required=True, help="labels.jsonl or its directory")
    p.add_argument("--out", required=True, help="bundle output directory")
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=_cmd_manifold)

    p = sub.add_parser("heatmap", help="re-render a bundle heatmap PNG")
    p.add_argument("--bundle", required=True)
    p.add_argument("--label", default="all", help="all|pop|formal|casual")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_heatmap)

    p = sub.add_parser("match", help="closest existing font by SSIM")
    p.add_argument("--query", required=True, help="28x28 grayscale PNG")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="match report JSON path")
    p.add_argument("--alphabet-out", help="write the A..Z strip PNG here")
    p.set_defaults(func=_cmd_match)

    p = sub.add_parser("analyze", help="comparison-study report from records")
    p.add_argument("--records", required=True, help="records.jsonl")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("serve", help="run the exploration HTTP service")
    p.add_argument("--model", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--manifold", help="manifold bundle directory")
    p.add_argument("--corpus", help="generated corpus directory")
    p.add_argument("--dataset", help="ingested dataset directory")
    p.add_argument("--port", type=int, default=None,
                   help="port (default: FM_PORT env or 8765)")
    p.add_argument("--app-dir", help="static frontend directory served at /app/")
    p.add_argument("--tasks", type=int, default=0,
                   help="create this many comparison targets if none exist")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FontManifoldError as exc:
        log.error("%s", exc)
        return 1
    except OSError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
