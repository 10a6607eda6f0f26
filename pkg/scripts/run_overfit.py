"""Overfit the stub ensemble on a freshly rendered corpus and report the curve.

OCR goes through the stub engine subprocess, so the full pipeline runs:
render -> ingest -> encode -> train -> plots.
"""
import argparse
import tempfile
import time
from pathlib import Path

from hatefusion.corpus import load_manifest
from hatefusion.evaluator import plot_history
from hatefusion.fusion import EnsembleModel, ModelSpec
from hatefusion.ocr import OcrCache, ingest, stub_engine
from hatefusion.synthetic import make_separable_corpus
from hatefusion.trainer import TrainConfig, fit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=None, help="keep corpus, checkpoints and plots here")
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = args.out or Path(tempfile.mkdtemp(prefix="overfit-"))
    start = time.perf_counter()
    manifest = load_manifest(make_separable_corpus(out / "corpus"), "train")
    summary = ingest(manifest, OcrCache.open(out / "ocr_cache.jsonl"), stub_engine())
    train = manifest.with_texts(summary.texts)

    spec = ModelSpec(image_size=64, stub_grid=2, stub_native_dim=256, seed=args.seed)
    config = TrainConfig(epochs=args.epochs, seed=args.seed)
    _, history = fit(config, train, train, EnsembleModel.from_spec(spec), out / "run")
    plot_history(history, out / "run")
    for r in history.records:
        print(f"epoch {r.epoch:3d}  loss {r.train_loss:.5f}  acc {r.train_acc:.3f}  lr {r.lr:.1e}")
    print(f"{time.perf_counter() - start:.1f}s, artifacts in {out}")


if __name__ == "__main__":
    main()
