"""Render the separable caption/background corpus and the 8-instance report fixture."""
import argparse
from pathlib import Path

from hatefusion.synthetic import make_separable_corpus, make_report_fixture


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", type=Path)
    ap.add_argument("--per-cell", type=int, default=10, help="images per (caption, background) cell")
    ap.add_argument("--size", type=int, default=64)
    args = ap.parse_args()
    corpus = make_separable_corpus(args.out / "corpus", args.per_cell, args.size)
    fixture = make_report_fixture(args.out / "report_fixture", args.size)
    print(corpus)
    print(fixture)


if __name__ == "__main__":
    main()
