"""Five-variant ablation with stub backbones on the synthetic corpus."""
import argparse
import tempfile
from pathlib import Path

from hatefusion.corpus import load_manifest
from hatefusion.evaluator import AblationSpec, run_ablation
from hatefusion.fusion import ModelSpec
from hatefusion.ocr import OcrCache, ingest, stub_engine
from hatefusion.synthetic import make_separable_corpus
from hatefusion.trainer import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=None)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--zero-fill", action="store_true", help="keep a 1536-d head and zero the absent branches")
    args = ap.parse_args()

    out = args.out or Path(tempfile.mkdtemp(prefix="ablation-"))
    manifest = load_manifest(make_separable_corpus(out / "corpus"), "train")
    summary = ingest(manifest, OcrCache.open(out / "ocr_cache.jsonl"), stub_engine())
    data = manifest.with_texts(summary.texts)

    model_spec = ModelSpec(image_size=64, stub_grid=2, stub_native_dim=256, zero_fill=args.zero_fill)
    spec = AblationSpec.from_keys(["text_a", "text_b", "vision", "text_pair", "ensemble"], model_spec)
    table = run_ablation(spec, data, data, TrainConfig(epochs=args.epochs), model_spec)
    table.write(out)
    print(table.to_markdown(reference=True), end="")
    print(out)


if __name__ == "__main__":
    main()
