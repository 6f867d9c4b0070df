#!/usr/bin/env python3
"""Run the whole pipeline at desk scale into ./desk-run/.

Without --fonts, a 200-glyph synthetic corpus stands in for real font
files; with --fonts DIR, real .ttf/.otf files are ingested instead. Every
stage goes through the CLI so the run matches what the README documents,
and each stage is idempotent given the same seed.
"""
import argparse
import sys
from pathlib import Path

from fontmanifold.cli import main as cli
from fontmanifold.synthetic import make_desk_corpus


def run(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--fonts", help="directory of real .ttf/.otf files")
    parser.add_argument("--out", default="desk-run", help="pipeline output root")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--epochs", type=int, default=10)
    parser.add_argument("--count", type=int, default=200,
                        help="synthetic corpus size when --fonts is absent")
    parser.add_argument("--sample-count", type=int, default=300,
                        help="generated corpus size (1592 for the full run)")
    parser.add_argument("--per-label", type=int, default=40)
    args = parser.parse_args(argv)

    root = Path(args.out)
    seed = str(args.seed)

    if args.fonts:
        if cli(["ingest", "--fonts", args.fonts, "--out", str(root / "dataset")]):
            return 1
    else:
        print(f"generating {args.count} synthetic glyphs -> {root / 'dataset'}")
        make_desk_corpus(root / "dataset", count=args.count, seed=args.seed)

    stages = [
        ["train", "--dataset", str(root / "dataset"),
         "--out", str(root / "model.pfmc"),
         "--epochs", str(args.epochs), "--seed", seed],
        ["sample", "--model", str(root / "model.pfmc"),
         "--count", str(args.sample_count), "--seed", seed,
         "--out", str(root / "corpus")],
        ["synth-labels", "--model", str(root / "model.pfmc"),
         "--per-label", str(args.per_label), "--seed", seed,
         "--auto-thresholds", "60", "--out", str(root / "data")],
        ["manifold", "--labels", str(root / "data" / "labels.jsonl"),
         "--seed", seed, "--out", str(root / "manifold")],
    ]
    for stage in stages:
        print("==>", "fontmanifold", " ".join(stage))
        code = cli(stage)
        if code:
            return code

    print()
    print("pipeline complete; serve it with:")
    print(f"  fontmanifold serve --model {root / 'model.pfmc'}"
          f" --data-dir {root / 'data'}"
          f" --manifold {root / 'manifold'}"
          f" --corpus {root / 'corpus'}"
          f" --tasks 10 --app-dir frontend/dist")
    return 0


if __name__ == "__main__":
    sys.exit(run())
