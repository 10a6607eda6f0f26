"""Run configuration: a flat ``section.key = value`` text format.

Grammar, one statement per line::

    # comment (also allowed after a value, preceded by whitespace)
    seed = 7
    train.learning_rate = 3e-4
    model.branches = vision, text_a, text_b
    paths.train_manifest = data/train.csv

* Keys are ``seed`` or ``<section>.<field>`` with sections ``paths``,
  ``model``, ``train``, ``ocr`` and ``ablation``. Unknown keys are errors.
* Values are parsed by the field's type: integers, floats, ``true``/``false``,
  ``none`` for optional values, comma-separated lists for tuples, and bare
  strings otherwise (no quoting).
* Relative paths are resolved against the config file's directory.
* A key may appear only once.
"""
from __future__ import annotations

import os
import types
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .fusion import ModelSpec
from .trainer import TrainConfig

CACHE_ENV = "HATEFUSION_CACHE"


@dataclass(frozen=True)
class PathsConfig:
    train_manifest: Optional[str] = None
    validation_manifest: Optional[str] = None
    test_manifest: Optional[str] = None
    cache: str = "ocr_cache.jsonl"
    output_dir: str = "runs"


@dataclass(frozen=True)
class OcrConfig:
    engine: str = "tesseract"  # tesseract | stub | command
    command: Optional[str] = None  # whitespace-separated argv for engine=command
    engine_id: Optional[str] = None
    timeout: float = 30.0
    workers: int = 4
    auto_ingest: bool = False

    def __post_init__(self):
        if self.engine not in ("tesseract", "stub", "command"):
            raise ConfigError(f"unknown OCR engine {self.engine!r}")
        if self.engine == "command" and not self.command:
            raise ConfigError("ocr.engine = command needs ocr.command")
        if self.timeout <= 0 or self.workers < 1:
            raise ConfigError("ocr.timeout must be > 0 and ocr.workers >= 1")


@dataclass(frozen=True)
class AblationConfig:
    variants: tuple[str, ...] = ("text_a", "text_b", "vision", "text_pair", "ensemble")
    zero_fill: bool = False


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    ocr: OcrConfig = field(default_factory=OcrConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    source: Optional[str] = None

    def with_seed(self, seed: int) -> "RunConfig":
        # one run seed, copied into the model and training sections
        return replace(
            self, seed=seed, model=replace(self.model, seed=seed), train=replace(self.train, seed=seed)
        )

    def path(self, name: str) -> Optional[Path]:
        value = getattr(self.paths, name)
        if name == "cache" and os.environ.get(CACHE_ENV):
            value = os.environ[CACHE_ENV]
        return None if value is None else Path(value)

    def dumps(self) -> str:
        lines = [f"seed = {self.seed}"]
        for section in ("paths", "model", "train", "ocr", "ablation"):
            obj = getattr(self, section)
            lines.append("")
            for f in fields(obj):
                if f.name == "seed":
                    continue
                lines.append(f"{section}.{f.name} = {_format(getattr(obj, f.name))}")
        return "\n".join(lines) + "\n"


_SECTIONS = {"paths": PathsConfig, "model": ModelSpec, "train": TrainConfig, "ocr": OcrConfig, "ablation": AblationConfig}
_PATH_KEYS = {
    ("paths", "train_manifest"),
    ("paths", "validation_manifest"),
    ("paths", "test_manifest"),
    ("paths", "cache"),
    ("paths", "output_dir"),
    ("model", "vision_weights"),
    ("model", "text_a_dir"),
    ("model", "text_b_dir"),
}


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _parse_scalar(text: str, typ, key: str):
    if typ is bool:
        low = text.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ConfigError(f"{key}: expected true/false, got {text!r}")
    if typ in (int, float):
        try:
            return typ(text)
        except ValueError:
            raise ConfigError(f"{key}: expected {typ.__name__}, got {text!r}") from None
    return text


def _parse_value(text: str, typ, key: str):
    origin = typing.get_origin(typ)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(typ) if a is not type(None)]
        if text.lower() == "none":
            return None
        return _parse_value(text, args[0], key)
    if origin is tuple:
        args = typing.get_args(typ)
        inner = args[0] if args else str
        return tuple(_parse_scalar(p.strip(), inner, key) for p in text.split(",") if p.strip())
    return _parse_scalar(text, typ, key)


def _strip_comment(line: str) -> str:
    if line.lstrip().startswith("#"):
        return ""
    for marker in (" #", "\t#"):
        pos = line.find(marker)
        if pos >= 0:
            line = line[:pos]
    return line.strip()


def parse_config(text: str, base_dir=None, source: Optional[str] = None) -> RunConfig:
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    values: dict[str, dict] = {name: {} for name in _SECTIONS}
    seed = 0
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw)
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        if key == "seed":
            seed = _parse_scalar(value, int, key)
            continue
        section, _, name = key.partition(".")
        if section not in _SECTIONS or not name:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        hints = typing.get_type_hints(_SECTIONS[section])
        if name not in hints or name == "seed":
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        parsed = _parse_value(value, hints[name], key)
        if (section, name) in _PATH_KEYS and parsed is not None and not Path(parsed).is_absolute():
            parsed = str((base_dir / parsed).resolve())
        values[section][name] = parsed

    try:
        sections = {name: cls(**values[name]) for name, cls in _SECTIONS.items()}
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    cfg = RunConfig(seed=seed, source=source, **sections)
    return cfg.with_seed(seed)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), path.parent, str(path))


def validate(cfg: RunConfig, need: tuple[str, ...] = ()) -> None:
    """Check that files a command depends on exist, before anything is written."""
    for name in need:
        p = cfg.path(name)
        if p is None:
            raise ConfigError(f"paths.{name} is required for this command")
        if not p.is_file():
            raise ConfigError(f"paths.{name}: file not found: {p}")
    m = cfg.model
    if "vision" in m.branches and m.vision == "inception_v3":
        if m.vision_weights is None or not Path(m.vision_weights).is_file():
            raise ConfigError(f"model.vision_weights: checkpoint not found: {m.vision_weights}")
    for key, kind, d in (("text_a", m.text_a, m.text_a_dir), ("text_b", m.text_b, m.text_b_dir)):
        if key in m.branches and kind == "hf" and (d is None or not Path(d).is_dir()):
            raise ConfigError(f"model.{key}_dir: weights directory not found: {d}")
