"""Command-line entry point: ``hatefusion {ingest,train,evaluate,ablate,report,plot,version}``."""
from __future__ import annotations

import argparse
import logging
import shlex
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import RunConfig, load_config, validate
from .corpus import SplitTag, load_manifest
from .errors import ConfigError, EmptyHistory, FingerprintMismatch, HateFusionError
from .evaluator import (
    AblationSpec,
    evaluate,
    empirical_report,
    plot_history,
    report_to_csv,
    report_to_markdown,
    run_ablation,
)
from .fusion import EnsembleModel
from .ocr import OcrCache, SubprocessEngine, ingest, stub_engine, tesseract_engine
from .trainer import Checkpoint, TrainHistory, fit

log = logging.getLogger("hatefusion")

MANIFEST_KEYS = {
    "train": ("train_manifest", SplitTag.TRAIN),
    "validation": ("validation_manifest", SplitTag.VALIDATION),
    "test": ("test_manifest", SplitTag.TEST),
}


def make_engine(cfg: RunConfig):
    ocr = cfg.ocr
    if ocr.engine == "stub":
        return stub_engine(ocr.timeout)
    if ocr.engine == "tesseract":
        return tesseract_engine(timeout=ocr.timeout)
    argv = shlex.split(ocr.command)
    return SubprocessEngine(argv, ocr.engine_id or f"command:{argv[0]}", ocr.timeout)


def run_dir(cfg: RunConfig, command: str, out=None) -> Path:
    root = Path(out) if out is not None else cfg.path("output_dir")
    stamp = time.strftime("%Y%m%d-%H%M%S")
    path = root / f"{stamp}-{command}"
    n = 1
    while path.exists():
        n += 1
        path = root / f"{stamp}-{command}-{n}"
    path.mkdir(parents=True)
    (path / "config.txt").write_text(cfg.dumps(), encoding="utf-8")
    return path


def load_split(cfg: RunConfig, which: str):
    key, tag = MANIFEST_KEYS[which]
    return load_manifest(cfg.path(key), tag)


def resolve_texts(cfg: RunConfig, manifest, auto_ingest=None):
    """Attach cached OCR text to every sample, ingesting on demand if allowed."""
    auto = cfg.ocr.auto_ingest if auto_ingest is None else auto_ingest
    engine = make_engine(cfg)
    cache = OcrCache.open(cfg.path("cache"))
    missing = [s.index for s in manifest.samples if cache.get(s.index, engine.engine_id) is None]
    if missing:
        if not auto:
            raise ConfigError(f"{len(missing)} samples lack OCR text (first: {missing[0]}); run `ingest` first")
        summary = ingest(manifest, cache, engine, cfg.ocr.workers)
        if summary.errors:
            raise HateFusionError(f"OCR failed for {sorted(summary.errors)}")
    return manifest.with_texts({s.index: cache.get(s.index, engine.engine_id) for s in manifest.samples})


# -- commands -------------------------------------------------------------


def cmd_ingest(cfg: RunConfig, args) -> int:
    splits = [w for w in ("train", "validation", "test") if getattr(cfg.paths, MANIFEST_KEYS[w][0])]
    if not splits:
        raise ConfigError("no manifests configured")
    validate(cfg, tuple(MANIFEST_KEYS[w][0] for w in splits))
    engine = make_engine(cfg)
    cache = OcrCache.open(cfg.path("cache"))
    totals = {"hits": 0, "misses": 0, "errors": 0}
    failed = []
    for which in splits:
        key, tag = MANIFEST_KEYS[which]
        manifest = load_manifest(cfg.path(key), tag, check_images=False)
        before = engine.calls
        summary = ingest(manifest, cache, engine, cfg.ocr.workers)
        totals["hits"] += summary.hits
        totals["misses"] += summary.misses
        totals["errors"] += len(summary.errors)
        failed.extend(summary.errors)
        print(
            f"{which}: {len(manifest)} samples, {summary.hits} hits, {summary.misses} misses, "
            f"{len(summary.errors)} errors, {engine.calls - before} engine calls"
        )
        for index, err in sorted(summary.errors.items()):
            print(f"  error {index}: {err}", file=sys.stderr)
    print(f"total: {totals['hits']} hits, {totals['misses']} misses, {totals['errors']} errors")
    if failed:
        print("unreadable: " + ", ".join(sorted(failed)), file=sys.stderr)
        return 1
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    validate(cfg, ("train_manifest", "validation_manifest"))
    train = resolve_texts(cfg, load_split(cfg, "train"))
    val = resolve_texts(cfg, load_split(cfg, "validation"))
    model = EnsembleModel.from_spec(cfg.model)
    out = run_dir(cfg, "train", args.out)
    _, history = fit(cfg.train, train, val, model, out)
    plot_history(history, out)
    last = history.records[-1]
    print(f"trained {len(history)} epochs: train_acc {last.train_acc:.4f} val_acc {last.val_acc:.4f}")
    print(out)
    return 0


def _load_checkpoint(cfg: RunConfig, path):
    ckpt = Checkpoint.load(path)
    if ckpt.fingerprint != cfg.train.fingerprint():
        raise FingerprintMismatch(f"{path} was trained under a different configuration")
    return ckpt


def _eval_manifest(cfg: RunConfig, args):
    if args.manifest:
        manifest = load_manifest(args.manifest, SplitTag.CUSTOM)
    else:
        validate(cfg, ("test_manifest",))
        manifest = load_split(cfg, "test")
    return resolve_texts(cfg, manifest)


def cmd_evaluate(cfg: RunConfig, args) -> int:
    ckpt = _load_checkpoint(cfg, args.checkpoint)
    manifest = _eval_manifest(cfg, args)
    model = ckpt.build_model()
    _, report = evaluate(model, manifest, cfg.train.max_seq_len)
    out = run_dir(cfg, "evaluate", args.out)
    lines = ["metric,value"]
    for k, v in report.as_row().items():
        lines.append(f"{k},{v!r}")
    for lab, scores in report.per_class.items():
        lines += [f"{lab.token}_{k},{getattr(scores, k)!r}" for k in ("precision", "recall", "f1")]
    (out / "metrics.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    md = ["| Metric | Value |", "|---|---|"] + [f"| {k} | {v:.4f} |" for k, v in report.as_row().items()]
    (out / "metrics.md").write_text("\n".join(md) + "\n", encoding="utf-8")
    print(f"accuracy {report.accuracy:.4f} macro_f1 {report.macro_f1:.4f}")
    print(out)
    return 0


def cmd_ablate(cfg: RunConfig, args) -> int:
    validate(cfg, ("train_manifest", "test_manifest"))
    spec = AblationSpec.from_keys(cfg.ablation.variants, cfg.model)
    train = resolve_texts(cfg, load_split(cfg, "train"))
    test = resolve_texts(cfg, load_split(cfg, "test"))
    val = resolve_texts(cfg, load_split(cfg, "validation")) if cfg.paths.validation_manifest else None
    model_spec = replace(cfg.model, zero_fill=cfg.ablation.zero_fill)
    table = run_ablation(spec, train, test, cfg.train, model_spec, validation=val)
    out = run_dir(cfg, "ablate", args.out)
    table.write(out)
    print(table.to_markdown(reference=False), end="")
    print(out)
    return 0


def cmd_report(cfg: RunConfig, args) -> int:
    ckpt = _load_checkpoint(cfg, args.checkpoint)
    manifest = _eval_manifest(cfg, args)
    model = ckpt.build_model()
    rows, summary = empirical_report(model, manifest, cfg.train.max_seq_len)
    out = run_dir(cfg, "report", args.out)
    (out / "report.csv").write_text(report_to_csv(rows), encoding="utf-8")
    (out / "report.md").write_text(report_to_markdown(rows, summary), encoding="utf-8")
    print(
        f"correct {summary.correct} incorrect {summary.incorrect} "
        f"(false negatives {summary.false_negatives}, false positives {summary.false_positives})"
    )
    print(out)
    return 0


def cmd_plot(cfg: RunConfig, args) -> int:
    path = Path(args.history)
    if not path.is_file():
        raise ConfigError(f"history table not found: {path}")
    history = TrainHistory.from_csv(path.read_text(encoding="utf-8"))
    if len(history) == 0:
        raise EmptyHistory(f"{path} has no epochs")
    out = run_dir(cfg, "plot", args.out)
    acc, loss = plot_history(history, out, args.format)
    print(acc)
    print(loss)
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "report": cmd_report,
    "plot": cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hatefusion", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("version", help="print the package version")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run config file")
        p.add_argument("--out", help="override paths.output_dir")
        p.add_argument("--seed", type=int, help="override the run seed")
        if name in ("evaluate", "report"):
            p.add_argument("--checkpoint", required=True)
            p.add_argument("--manifest", help="manifest to score (default: paths.test_manifest)")
        if name == "plot":
            p.add_argument("--history", required=True, help="history.csv written by train")
            p.add_argument("--format", default="png", choices=("png", "pdf", "svg"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.command == "version":
        print(f"hatefusion {__version__}")
        return 0
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        return COMMANDS[args.command](cfg, args)
    except HateFusionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
