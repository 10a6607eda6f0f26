"""Synthetic text-embedded images for tests and desk-scale experiments.

Every PNG written here carries its rendered caption in a text chunk, which
:mod:`hatefusion.ocr_stub` reads back.

The separable corpus crosses two cues. The caption is ``KILLS`` or its
anagram ``SKILL``, drawn glyph by glyph at integer offsets without
antialiasing inside one quadrant of the image, so a quadrant-averaging
vision stub sees the same ink either way. The background is warm or cool.
A sample is hateful iff it says ``KILLS`` on a warm background. The text
branches alone, or the vision branch alone, cannot separate the classes.
Their fusion can.
"""
from __future__ import annotations

from functools import lru_cache
from pathlib import Path

from PIL import Image, ImageDraw, ImageFont
from PIL.PngImagePlugin import PngInfo

from .corpus import DatasetManifest, Label, Sample, SplitTag, write_manifest
from .ocr_stub import KEY

HATE_WORD = "KILLS"
BENIGN_WORD = "SKILL"
WARM = (200, 40, 40)
COOL = (40, 60, 200)


@lru_cache(maxsize=None)
def font(size: int, mono: bool = True):
    from matplotlib import font_manager

    family = "DejaVu Sans Mono" if mono else "DejaVu Sans"
    path = font_manager.findfont(font_manager.FontProperties(family=family, weight="bold"))
    return ImageFont.truetype(path, size)


def save_png(image: Image.Image, path, caption: str = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    info = PngInfo()
    if caption is not None:
        info.add_text(KEY, caption)
    image.save(path, format="PNG", pnginfo=info)
    return path


def render_text_image(path, text: str, font_size: int = 48, margin: int = 24) -> Path:
    """Black text on white, sized to fit; for OCR fixtures."""
    f = font(font_size, mono=False)
    left, top, right, bottom = f.getbbox(text)
    w, h = right - left + 2 * margin, bottom - top + 2 * margin
    im = Image.new("RGB", (w, h), "white")
    ImageDraw.Draw(im).text((margin - left, margin - top), text, fill="black", font=f)
    return save_png(im, path, text)


def render_solid_image(path, color=(128, 128, 128), size=(64, 64)) -> Path:
    return save_png(Image.new("RGB", size, color), path)


def render_caption_tile(path, word: str, background, size: int = 64, font_size: int = 8) -> Path:
    """Word drawn in the top-left quadrant, one glyph per fixed-width cell."""
    im = Image.new("RGB", (size, size), background)
    f = font(font_size)
    advance = max(f.getbbox(ch)[2] for ch in word) + 1
    half = size // 2
    if advance * len(word) > half:
        raise ValueError(f"{word!r} does not fit in a {half}px quadrant at {font_size}pt")
    for i, ch in enumerate(word):
        glyph = Image.new("1", (advance, half), 0)
        d = ImageDraw.Draw(glyph)
        d.fontmode = "1"
        d.text((0, 2), ch, fill=1, font=f)
        im.paste((255, 255, 255), (i * advance, half // 4), glyph)
    return save_png(im, path, word)


def _cells():
    for word in (BENIGN_WORD, HATE_WORD):
        for background in (COOL, WARM):
            label = Label.HATE if (word == HATE_WORD and background == WARM) else Label.NO_HATE
            yield word, background, label


def make_separable_corpus(out_dir, per_cell: int = 10, image_size: int = 64) -> Path:
    """Write ``4 * per_cell`` images and ``manifest.csv``; returns the manifest path."""
    out_dir = Path(out_dir)
    samples = []
    for c, (word, bg, label) in enumerate(_cells()):
        for k in range(per_cell):
            index = f"s{c}{k:03d}"
            rel = f"images/{index}.png"
            render_caption_tile(out_dir / rel, word, bg, image_size)
            samples.append(Sample(index, rel, label))
    # interleave cells so any prefix is mixed
    samples.sort(key=lambda s: (s.index[2:], s.index[1]))
    return write_manifest(DatasetManifest(samples, SplitTag.TRAIN), out_dir / "manifest.csv")


# (instance, actual label, caption, background): with a model that has
# learned the separable corpus, predictions follow the actual-vs-predicted
# pattern of four hits and four misses
REPORT_PATTERN = [
    ("4a", Label.HATE, BENIGN_WORD, WARM),
    ("4b", Label.HATE, HATE_WORD, WARM),
    ("4c", Label.HATE, HATE_WORD, COOL),
    ("4d", Label.HATE, HATE_WORD, WARM),
    ("5a", Label.NO_HATE, BENIGN_WORD, COOL),
    ("5b", Label.NO_HATE, BENIGN_WORD, WARM),
    ("5c", Label.NO_HATE, HATE_WORD, WARM),
    ("5d", Label.NO_HATE, HATE_WORD, WARM),
]


def make_report_fixture(out_dir, image_size: int = 64) -> Path:
    out_dir = Path(out_dir)
    samples = []
    for index, label, word, bg in REPORT_PATTERN:
        rel = f"images/{index}.png"
        render_caption_tile(out_dir / rel, word, bg, image_size)
        samples.append(Sample(index, rel, label))
    return write_manifest(DatasetManifest(samples, SplitTag.CUSTOM), out_dir / "manifest.csv")
