"""OCR text extraction behind a subprocess contract, with a JSONL cache.

Any engine works as long as it takes an image path argument, prints the
recognized text on stdout and exits 0.
"""
from __future__ import annotations

import json
import logging
import os
import re
import shutil
import subprocess
import sys
import threading
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from PIL import Image

from .corpus import DatasetManifest, Sample
from .errors import (
    CacheWriteFailure,
    EngineFailure,
    EngineUnavailable,
    HateFusionError,
    Timeout,
    UnreadableImage,
)

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0


@dataclass(frozen=True)
class RawOcrResult:
    index: str
    text: str
    engine_id: str


class SubprocessEngine:
    """An OCR engine run as a child process.

    ``command`` may contain an ``{image}`` placeholder; otherwise the image
    path is appended as the last argument.
    """

    def __init__(self, command: Sequence[str], engine_id: str, timeout: float = DEFAULT_TIMEOUT):
        self.command = list(command)
        self.engine_id = engine_id
        self.timeout = timeout
        self.calls = 0
        self._lock = threading.Lock()

    def __repr__(self):
        return f"SubprocessEngine({self.engine_id!r})"

    def argv(self, image_path) -> list[str]:
        if "{image}" in self.command:
            return [str(image_path) if a == "{image}" else a for a in self.command]
        return self.command + [str(image_path)]

    def run(self, image_path) -> str:
        with self._lock:
            self.calls += 1
        try:
            proc = subprocess.run(self.argv(image_path), capture_output=True, timeout=self.timeout)
        except FileNotFoundError as exc:
            raise EngineUnavailable(f"cannot execute {self.command[0]!r}") from exc
        except subprocess.TimeoutExpired:
            raise Timeout(self.timeout) from None
        if proc.returncode != 0:
            raise EngineFailure(proc.returncode, proc.stderr.decode("utf-8", "replace"))
        return proc.stdout.decode("utf-8", "replace")


def tesseract_engine(binary: str = "tesseract", timeout: float = DEFAULT_TIMEOUT) -> SubprocessEngine:
    exe = shutil.which(binary)
    if exe is None:
        raise EngineUnavailable(f"{binary!r} not found on PATH")
    proc = subprocess.run([exe, "--version"], capture_output=True, timeout=timeout)
    banner = (proc.stdout or proc.stderr).decode("utf-8", "replace").splitlines()
    version = banner[0].strip() if banner else "unknown"
    return SubprocessEngine([exe, "{image}", "stdout"], f"tesseract:{version}", timeout)


def stub_engine(timeout: float = DEFAULT_TIMEOUT) -> SubprocessEngine:
    """Engine that reads the caption stored in a PNG text chunk.

    Synthetic images written by :mod:`hatefusion.synthetic` carry their
    rendered string in metadata, so this stands in for a real engine while
    still crossing the process boundary.
    """
    return SubprocessEngine([sys.executable, "-m", "hatefusion.ocr_stub"], "stub-png-text:1", timeout)


def extract_text(image_path, engine, index: Optional[str] = None) -> RawOcrResult:
    image_path = Path(image_path)
    index = index if index is not None else image_path.stem
    try:
        with Image.open(image_path) as im:
            im.verify()
    except Exception as exc:
        raise UnreadableImage(index, str(exc)) from exc
    return RawOcrResult(index, engine.run(image_path), engine.engine_id)


_WS = re.compile(r"\s+")


def normalize_text(raw: str) -> str:
    """Collapse whitespace runs to one space, strip, and drop control characters."""
    # whitespace controls (\t, \n, \r, ...) become spaces before the category filter
    chars = []
    for ch in raw:
        if ch.isspace():
            chars.append(" ")
        elif unicodedata.category(ch) in ("Cc", "Cf", "Cs", "Co", "Cn"):
            continue
        else:
            chars.append(ch)
    return _WS.sub(" ", "".join(chars)).strip()


@dataclass
class OcrCache:
    store_path: Path
    entries: dict[tuple[str, str], str] = field(default_factory=dict)

    def __post_init__(self):
        self.store_path = Path(self.store_path)
        self._lock = threading.Lock()

    @classmethod
    def open(cls, store_path) -> "OcrCache":
        cache = cls(Path(store_path))
        if cache.store_path.exists():
            with open(cache.store_path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    if not line.strip():
                        continue
                    try:
                        rec = json.loads(line)
                        cache.entries[(rec["index"], rec["engine_id"])] = rec["text"]
                    except (json.JSONDecodeError, KeyError):
                        # a torn trailing write from an interrupted run
                        log.warning("skipping unreadable cache record at %s:%d", cache.store_path, lineno)
        return cache

    def get(self, index: str, engine_id: str) -> Optional[str]:
        return self.entries.get((index, engine_id))

    def put(self, index: str, engine_id: str, text: str) -> None:
        record = json.dumps({"index": index, "engine_id": engine_id, "text": text}, ensure_ascii=False) + "\n"
        data = record.encode("utf-8")
        with self._lock:
            try:
                self.store_path.parent.mkdir(parents=True, exist_ok=True)
                # single O_APPEND write per record: concurrent appenders never interleave
                fd = os.open(self.store_path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
                try:
                    os.write(fd, data)
                    os.fsync(fd)
                finally:
                    os.close(fd)
            except OSError as exc:
                raise CacheWriteFailure(str(exc)) from exc
            self.entries[(index, engine_id)] = text


def get_or_extract(sample: Sample, cache: OcrCache, engine) -> str:
    hit = cache.get(sample.index, engine.engine_id)
    if hit is not None:
        return hit
    raw = extract_text(sample.path, engine, sample.index)
    text = normalize_text(raw.text)
    cache.put(sample.index, engine.engine_id, text)
    return text


@dataclass
class IngestSummary:
    hits: int = 0
    misses: int = 0
    errors: dict[str, str] = field(default_factory=dict)
    texts: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.errors


def ingest(manifest: DatasetManifest, cache: OcrCache, engine, workers: int = 4) -> IngestSummary:
    """Populate the cache for every sample using a bounded thread pool."""
    summary = IngestSummary()
    todo = []
    for s in manifest.samples:
        hit = cache.get(s.index, engine.engine_id)
        if hit is None:
            todo.append(s)
        else:
            summary.hits += 1
            summary.texts[s.index] = hit

    def work(sample):
        try:
            return sample.index, get_or_extract(sample, cache, engine), None
        except HateFusionError as exc:
            return sample.index, None, str(exc)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for index, text, err in pool.map(work, todo):
            if err is None:
                summary.misses += 1
                summary.texts[index] = text
            else:
                summary.errors[index] = err
    return summary
