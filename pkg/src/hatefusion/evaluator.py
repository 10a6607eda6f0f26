"""Metrics, the ablation matrix, training-curve plots and per-instance reports."""
from __future__ import annotations

import csv
import io
import logging
import os
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

from .corpus import DatasetManifest, Label
from .errors import (
    DuplicateVariant,
    EmptyHistory,
    EmptyInput,
    EmptyMatrix,
    LengthMismatch,
    UnknownVariant,
    UnlabeledSample,
    UnwritableDirectory,
)
from .fusion import BRANCH_ORDER, EnsembleModel, ModelSpec
from .trainer import fit

log = logging.getLogger(__name__)

# reported scores, shown next to ablation output for orientation only
REFERENCE_TABLE = {
    "BERT": (69.65, 69.51),
    "XLNET": (71.80, 71.56),
    "InceptionV3": (48.12, 48.11),
    "MobileNetV3": (42.41, 42.20),
    "ResNet 152": (44.47, 44.38),
    "BERT + XLNET": (73.51, 73.39),
    "Ensemble Model": (75.21, 74.96),
}


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with HATE as the positive class."""

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(preds: Sequence[Label], labels: Sequence[Label]) -> ConfusionMatrix:
    if len(preds) != len(labels):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(labels)} labels")
    if not preds:
        raise EmptyInput("nothing to compare")
    tp = fp = tn = fn = 0
    for p, y in zip(preds, labels):
        p, y = Label(p), Label(y)
        if p is Label.HATE:
            if y is Label.HATE:
                tp += 1
            else:
                fp += 1
        elif y is Label.HATE:
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix(tp, fp, tn, fn)


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class MetricReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: dict[Label, ClassScores]

    def as_row(self) -> dict[str, float]:
        return {
            "accuracy": self.accuracy,
            "precision": self.macro_precision,
            "recall": self.macro_recall,
            "f1": self.macro_f1,
        }


def _ratio(num: int, den: int, what: str) -> float:
    if den == 0:
        warnings.warn(f"{what} undefined (zero denominator); reporting 0", RuntimeWarning, stacklevel=3)
        return 0.0
    return num / den


def _scores(tp: int, fp: int, fn: int, name: str) -> ClassScores:
    p = _ratio(tp, tp + fp, f"{name} precision")
    r = _ratio(tp, tp + fn, f"{name} recall")
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return ClassScores(p, r, f1)


def metrics(cm: ConfusionMatrix) -> MetricReport:
    """Accuracy and macro-averaged precision/recall/F1 over both classes."""
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix is empty")
    per_class = {
        Label.HATE: _scores(cm.tp, cm.fp, cm.fn, "hate"),
        Label.NO_HATE: _scores(cm.tn, cm.fn, cm.fp, "no_hate"),
    }
    k = len(per_class)
    return MetricReport(
        accuracy=(cm.tp + cm.tn) / cm.total,
        macro_precision=sum(s.precision for s in per_class.values()) / k,
        macro_recall=sum(s.recall for s in per_class.values()) / k,
        macro_f1=sum(s.f1 for s in per_class.values()) / k,
        per_class=per_class,
    )


def evaluate(model, manifest: DatasetManifest, max_len: int = 512):
    """Predict every sample; returns ``(predictions, MetricReport)``."""
    preds = model.predict_manifest(manifest, max_len=max_len)
    report = metrics(confusion([p.label for p in preds], [s.label for s in manifest.samples]))
    return preds, report


# -- ablation -------------------------------------------------------------


@dataclass(frozen=True)
class Variant:
    name: str
    branches: tuple[str, ...]


VARIANT_BRANCHES = {
    "text_a": ("text_a",),
    "text_b": ("text_b",),
    "vision": ("vision",),
    "text_pair": ("text_a", "text_b"),
    "ensemble": BRANCH_ORDER,
}


def variant_display_name(key: str, spec: ModelSpec) -> str:
    return {
        "text_a": spec.text_a_name,
        "text_b": spec.text_b_name,
        "vision": spec.vision_name,
        "text_pair": f"{spec.text_a_name} + {spec.text_b_name}",
        "ensemble": "Ensemble Model",
    }[key]


@dataclass
class AblationSpec:
    variants: list[Variant]

    def __post_init__(self):
        names = [v.name for v in self.variants]
        if len(set(names)) != len(names):
            dup = next(n for n in names if names.count(n) > 1)
            raise DuplicateVariant(f"variant {dup!r} listed twice")
        for v in self.variants:
            if not v.branches or set(v.branches) - set(BRANCH_ORDER):
                raise UnknownVariant(f"variant {v.name!r} has unknown branches {v.branches}")

    @classmethod
    def from_keys(cls, keys: Sequence[str], spec: ModelSpec = ModelSpec()) -> "AblationSpec":
        if len(set(keys)) != len(keys):
            raise DuplicateVariant(f"duplicate variant in {list(keys)}")
        variants = []
        for key in keys:
            if key not in VARIANT_BRANCHES:
                raise UnknownVariant(f"unknown variant {key!r}; choose from {sorted(VARIANT_BRANCHES)}")
            variants.append(Variant(variant_display_name(key, spec), VARIANT_BRANCHES[key]))
        return cls(variants)


@dataclass
class AblationRow:
    model: str
    report: MetricReport
    history: object = None


@dataclass
class AblationTable:
    rows: list[AblationRow] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "accuracy", "f1"])
        for r in self.rows:
            w.writerow([r.model, f"{100 * r.report.accuracy:.2f}", f"{100 * r.report.macro_f1:.2f}"])
        return buf.getvalue()

    def to_markdown(self, reference: bool = True) -> str:
        lines = ["| Model | Accuracy | F1 Score |", "|---|---|---|"]
        for r in self.rows:
            lines.append(f"| {r.model} | {100 * r.report.accuracy:.2f} | {100 * r.report.macro_f1:.2f} |")
        if reference:
            lines += ["", "Reference scores reported for the competition data (not reproduced here):", ""]
            lines += ["| Model | Accuracy | F1 Score |", "|---|---|---|"]
            lines += [f"| {m} | {a:.2f} | {f:.2f} |" for m, (a, f) in REFERENCE_TABLE.items()]
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> tuple[Path, Path]:
        out_dir = _writable(out_dir)
        csv_path = out_dir / "ablation.csv"
        md_path = out_dir / "ablation.md"
        csv_path.write_text(self.to_csv(), encoding="utf-8")
        md_path.write_text(self.to_markdown(), encoding="utf-8")
        return csv_path, md_path


def run_ablation(
    spec: AblationSpec,
    train: DatasetManifest,
    test: DatasetManifest,
    config,
    model_spec: ModelSpec = ModelSpec(),
    validation: Optional[DatasetManifest] = None,
    fit_fn: Optional[Callable] = None,
) -> AblationTable:
    """Train and score every variant on identical splits and seeds.

    ``test`` is the set each row is scored on; ``validation`` (defaults to
    ``test``) drives best-checkpoint bookkeeping during training.
    """
    fit_fn = fit_fn or fit
    validation = test if validation is None else validation
    table = AblationTable()
    for variant in spec.variants:
        vspec = replace(model_spec, branches=tuple(b for b in BRANCH_ORDER if b in variant.branches))
        model = EnsembleModel.from_spec(vspec)
        _, history = fit_fn(config, train, validation, model)
        _, report = evaluate(model, test, config.max_seq_len)
        log.info("ablation %s: acc %.4f f1 %.4f", variant.name, report.accuracy, report.macro_f1)
        table.rows.append(AblationRow(variant.name, report, history))
    return table


# -- plots ----------------------------------------------------------------


def _writable(out_dir) -> Path:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UnwritableDirectory(str(exc)) from exc
    if not os.access(out_dir, os.W_OK):
        raise UnwritableDirectory(f"{out_dir} is not writable")
    return out_dir


def plot_history(history, out_dir, fmt: str = "png") -> tuple[Path, Path]:
    """Write ``accuracy_vs_epoch`` and ``loss_vs_epoch`` plots plus ``plot_data.csv``."""
    if len(history) == 0:
        raise EmptyHistory("no epochs recorded")
    out_dir = _writable(out_dir)

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    epochs = [r.epoch + 1 for r in history.records]
    paths = []
    for stem, key, ylabel in (("accuracy_vs_epoch", "acc", "Accuracy"), ("loss_vs_epoch", "loss", "Loss")):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(epochs, [getattr(r, f"train_{key}") for r in history.records], marker=".", label="train")
        ax.plot(epochs, [getattr(r, f"val_{key}") for r in history.records], marker=".", label="validation")
        ax.set_xlabel("Epoch")
        ax.set_ylabel(ylabel)
        ax.legend()
        fig.tight_layout()
        path = out_dir / f"{stem}.{fmt}"
        fig.savefig(path)
        plt.close(fig)
        paths.append(path)
    (out_dir / "plot_data.csv").write_text(history.to_csv(), encoding="utf-8")
    return paths[0], paths[1]


# -- empirical report -------------------------------------------------------


@dataclass(frozen=True)
class EmpiricalRow:
    index: str
    actual: Label
    predicted: Label
    confidence: float
    ocr_excerpt: str

    @property
    def correct(self) -> bool:
        return self.actual is self.predicted


@dataclass
class EmpiricalSummary:
    correct: int
    incorrect: int
    # actual label -> (agreements, disagreements)
    by_actual: dict[Label, tuple[int, int]]

    @property
    def false_negatives(self) -> int:
        return self.by_actual[Label.HATE][1]

    @property
    def false_positives(self) -> int:
        return self.by_actual[Label.NO_HATE][1]


def empirical_report(model, samples: DatasetManifest, max_len: int = 512):
    """Per-instance actual vs predicted rows, with agreement counts per actual label."""
    preds = model.predict_manifest(samples, max_len=max_len)
    rows = []
    for s, p in zip(samples.samples, preds):
        if s.label is None:
            raise UnlabeledSample(s.index)
        rows.append(EmpiricalRow(s.index, s.label, p.label, p.confidence, (s.ocr_text or "")[:120]))
    by_actual = {}
    for lab in Label:
        mine = [r for r in rows if r.actual is lab]
        agree = sum(r.correct for r in mine)
        by_actual[lab] = (agree, len(mine) - agree)
    correct = sum(r.correct for r in rows)
    return rows, EmpiricalSummary(correct, len(rows) - correct, by_actual)


def report_to_csv(rows: Sequence[EmpiricalRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "actual", "predicted", "confidence", "ocr_excerpt"])
    for r in rows:
        w.writerow([r.index, r.actual.token, r.predicted.token, f"{r.confidence:.6f}", r.ocr_excerpt])
    return buf.getvalue()


def report_to_markdown(rows: Sequence[EmpiricalRow], summary: EmpiricalSummary) -> str:
    lines = ["| Image Instance | Actual Label | Predicted Label | Confidence |", "|---|---|---|---|"]
    for r in rows:
        lines.append(f"| {r.index} | {r.actual.display} | {r.predicted.display} | {r.confidence:.3f} |")
    lines += [
        "",
        f"Correct: {summary.correct}, incorrect: {summary.incorrect} "
        f"(false negatives: {summary.false_negatives}, false positives: {summary.false_positives})",
    ]
    return "\n".join(lines) + "\n"
