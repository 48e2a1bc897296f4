#!/usr/bin/env python3
"""Convert whitespace-separated numeric event rows into the TSV event format.

Usage:
    python scripts/convert_quadruples.py raw/train.txt data/train.tsv --columns "h r t a_h a_t tau"
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from app.dataio import convert_quadruples


def main() -> int:
    parser = argparse.ArgumentParser(description="Convert numeric event rows to TSV events")
    parser.add_argument("src")
    parser.add_argument("dst")
    parser.add_argument("--columns", default="h r t a_h a_t tau")
    args = parser.parse_args()

    count = convert_quadruples(args.src, args.dst, args.columns)
    print(f"converted={count} dst={args.dst}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
