"""Dataset manifests: loading, validation, class statistics and stratified splits.

A manifest is a UTF-8 CSV with header ``index,image_path,label`` (label
column omitted for unlabeled sets). Labels are written by name, ``hate`` or
``no_hate``; image paths are resolved relative to the manifest's directory.
"""
from __future__ import annotations

import csv
import enum
import io
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

from PIL import Image

from .errors import (
    BadFractions,
    DuplicateIndex,
    EmptyClass,
    EmptyManifest,
    MalformedRow,
    MissingFile,
    UnlabeledSample,
    UnreadableImage,
)


class Label(enum.IntEnum):
    NO_HATE = 0
    HATE = 1

    @property
    def token(self) -> str:
        return "hate" if self is Label.HATE else "no_hate"

    @property
    def display(self) -> str:
        return "Hate Speech" if self is Label.HATE else "No Hate Speech"

    @classmethod
    def parse(cls, text: str) -> "Label":
        key = text.strip().lower()
        if key == "hate":
            return cls.HATE
        if key == "no_hate":
            return cls.NO_HATE
        raise ValueError(f"unknown label {text!r}")


class SplitTag(str, enum.Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"
    CUSTOM = "custom"


@dataclass(frozen=True)
class Sample:
    index: str
    image_path: str
    label: Optional[Label] = None
    ocr_text: Optional[str] = None
    # resolved location of image_path; not serialized
    image_file: Optional[Path] = field(default=None, compare=False, repr=False)

    @property
    def path(self) -> Path:
        return self.image_file if self.image_file is not None else Path(self.image_path)


@dataclass(frozen=True)
class DatasetManifest:
    samples: tuple[Sample, ...]
    split_tag: SplitTag = SplitTag.CUSTOM

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        seen = set()
        for s in self.samples:
            if s.index in seen:
                raise DuplicateIndex(s.index)
            seen.add(s.index)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def labeled(self) -> bool:
        return all(s.label is not None for s in self.samples)

    @property
    def indices(self) -> list[str]:
        return [s.index for s in self.samples]

    def with_texts(self, texts: dict[str, str]) -> "DatasetManifest":
        """Return a copy with ``ocr_text`` filled from ``texts`` (keyed by index)."""
        samples = [replace(s, ocr_text=texts.get(s.index, s.ocr_text)) for s in self.samples]
        return DatasetManifest(samples, self.split_tag)


@dataclass(frozen=True)
class ClassStats:
    counts: dict[Label, int]
    weights: dict[Label, float]

    def weight_list(self) -> list[float]:
        return [self.weights[Label.NO_HATE], self.weights[Label.HATE]]


def _check_image(path: Path, index: str) -> None:
    if not path.is_file():
        raise UnreadableImage(index, f"{path} does not exist")
    try:
        with Image.open(path) as im:
            im.verify()
    except Exception as exc:  # PIL raises a zoo of types here
        raise UnreadableImage(index, str(exc)) from exc


def load_manifest(path, split_tag=SplitTag.CUSTOM, check_images: bool = True) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest not found: {path}")
    split_tag = SplitTag(split_tag)
    root = path.parent

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MalformedRow(1, "missing header") from None
        if header not in (["index", "image_path", "label"], ["index", "image_path"]):
            raise MalformedRow(1, f"unexpected header {header}")
        has_label = len(header) == 3

        samples = []
        seen = set()
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise MalformedRow(line, f"expected {len(header)} fields, got {len(row)}")
            index, image_path = row[0].strip(), row[1].strip()
            if not index or not image_path:
                raise MalformedRow(line, "empty index or image_path")
            label = None
            if has_label:
                try:
                    label = Label.parse(row[2])
                except ValueError as exc:
                    raise MalformedRow(line, str(exc)) from None
            if index in seen:
                raise DuplicateIndex(index)
            seen.add(index)
            image_file = Path(image_path)
            if not image_file.is_absolute():
                image_file = root / image_file
            samples.append(Sample(index, image_path, label, image_file=image_file))

    if check_images:
        for s in samples:
            _check_image(s.path, s.index)
    return DatasetManifest(samples, split_tag)


def dumps_manifest(manifest: DatasetManifest) -> str:
    labeled = manifest.labeled
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["index", "image_path", "label"] if labeled else ["index", "image_path"])
    for s in manifest.samples:
        row = [s.index, s.image_path]
        if labeled:
            row.append(s.label.token)
        writer.writerow(row)
    return buf.getvalue()


def write_manifest(manifest: DatasetManifest, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_manifest(manifest), encoding="utf-8")
    return path


def class_stats(manifest: DatasetManifest) -> ClassStats:
    """Label counts and inverse-frequency weights ``N / (K * n_c)``."""
    if len(manifest) == 0:
        raise EmptyManifest("cannot compute class statistics of an empty manifest")
    counts = {lab: 0 for lab in Label}
    for s in manifest.samples:
        if s.label is None:
            raise UnlabeledSample(s.index)
        counts[s.label] += 1
    n, k = len(manifest), len(Label)
    for lab, c in counts.items():
        if c == 0:
            raise EmptyClass(f"no samples labeled {lab.token}")
    weights = {lab: n / (k * c) for lab, c in counts.items()}
    return ClassStats(counts, weights)


def _largest_remainder(total: int, fractions: Iterable[float]) -> list[int]:
    ideal = [total * f for f in fractions]
    out = [int(x) for x in ideal]
    order = sorted(range(len(ideal)), key=lambda i: (-(ideal[i] - out[i]), i))
    for i in order[: total - sum(out)]:
        out[i] += 1
    return out


def split_manifest(manifest: DatasetManifest, fractions, seed: int):
    """Stratified, seeded three-way split into (train, validation, test).

    Each split's size follows the largest-remainder rounding of
    ``len(manifest) * fraction``; per-class counts deviate from their ideal
    share by less than one sample.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractions(f"fractions must be three positive values summing to 1, got {fractions}")
    if len(manifest) == 0:
        raise EmptyManifest("cannot split an empty manifest")

    split_sizes = _largest_remainder(len(manifest), fractions)

    groups: dict[Optional[Label], list[Sample]] = {}
    for s in manifest.samples:
        groups.setdefault(s.label, []).append(s)
    keys = sorted(groups, key=lambda k: -1 if k is None else int(k))

    # floor allocation per (class, split), then hand out the leftovers so that
    # column totals hit split_sizes; each class gives at most one extra per split
    alloc = {}
    leftover = {}
    frac_part = {}
    for k in keys:
        n_c = len(groups[k])
        ideal = [n_c * f for f in fractions]
        alloc[k] = [int(x) for x in ideal]
        leftover[k] = n_c - sum(alloc[k])
        frac_part[k] = [x - int(x) for x in ideal]
    capacity = [split_sizes[j] - sum(alloc[k][j] for k in keys) for j in range(3)]
    for k in sorted(keys, key=lambda k: -leftover[k]):
        for _ in range(leftover[k]):
            candidates = [j for j in range(3) if capacity[j] > 0 and alloc[k][j] == int(len(groups[k]) * fractions[j])]
            if not candidates:
                candidates = [j for j in range(3) if capacity[j] > 0]
            j = max(candidates, key=lambda j: (capacity[j], frac_part[k][j], -j))
            alloc[k][j] += 1
            capacity[j] -= 1

    rng = random.Random(seed)
    parts: list[set[str]] = [set(), set(), set()]
    for k in keys:
        members = [s.index for s in groups[k]]
        rng.shuffle(members)
        start = 0
        for j in range(3):
            parts[j].update(members[start : start + alloc[k][j]])
            start += alloc[k][j]

    tags = (SplitTag.TRAIN, SplitTag.VALIDATION, SplitTag.TEST)
    # keep parent order inside each split
    return tuple(
        DatasetManifest([s for s in manifest.samples if s.index in parts[j]], tags[j]) for j in range(3)
    )
