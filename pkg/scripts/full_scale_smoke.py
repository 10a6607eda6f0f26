"""Manual full-scale check with real pretrained backbones.

Trains for a few epochs on a user-supplied labeled corpus and compares
validation accuracy against the untrained model. Exits 0 when the gain
reaches ``--min-gain``.

    python3 scripts/full_scale_smoke.py --config real.cfg

The config must point ``model.vision_weights``, ``model.text_a_dir`` and
``model.text_b_dir`` at local checkpoints (``vision = inception_v3``,
``text_a = hf``, ``text_b = hf``) and name train and validation manifests.
"""
import argparse
import sys
from dataclasses import replace

from hatefusion.cli import load_split, resolve_texts
from hatefusion.config import load_config, validate
from hatefusion.evaluator import evaluate
from hatefusion.fusion import EnsembleModel
from hatefusion.trainer import fit


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--min-samples", type=int, default=500)
    ap.add_argument("--min-gain", type=float, default=0.10)
    args = ap.parse_args(argv)

    cfg = load_config(args.config)
    validate(cfg, ("train_manifest", "validation_manifest"))
    if cfg.model.vision != "inception_v3" or cfg.model.text_a != "hf" or cfg.model.text_b != "hf":
        print("warning: not all branches use real backbones", file=sys.stderr)
    train = resolve_texts(cfg, load_split(cfg, "train"))
    val = resolve_texts(cfg, load_split(cfg, "validation"))
    n = len(train) + len(val)
    if n < args.min_samples:
        print(f"corpus has {n} samples, need at least {args.min_samples}", file=sys.stderr)
        return 2

    model = EnsembleModel.from_spec(cfg.model)
    _, before = evaluate(model, val, cfg.train.max_seq_len)
    _, history = fit(replace(cfg.train, epochs=args.epochs), train, val, model)
    after = history.records[-1].val_acc
    gain = after - before.accuracy
    print(f"val_acc before {before.accuracy:.4f} after {after:.4f} gain {gain * 100:+.2f} pp")
    return 0 if gain >= args.min_gain else 1


if __name__ == "__main__":
    sys.exit(main())
