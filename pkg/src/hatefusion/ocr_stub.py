"""Minimal OCR stand-in: prints the caption stored in a PNG text chunk.

Usage: ``python -m hatefusion.ocr_stub IMAGE``. Images without the chunk
yield empty output, which matches an engine finding no text.
"""
import sys

from PIL import Image

KEY = "ocr_text"


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python -m hatefusion.ocr_stub IMAGE", file=sys.stderr)
        return 2
    try:
        with Image.open(argv[0]) as im:
            im.load()
            text = getattr(im, "text", {}).get(KEY, "")
    except Exception as exc:
        print(f"cannot read {argv[0]}: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
