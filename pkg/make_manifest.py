#!/usr/bin/env python3
"""
Вспомогательный скрипт: записывает синтетический манифест для настольных прогонов.

Примеры:
    python3 make_manifest.py data/manifest.csv --per-class 200
    python3 make_manifest.py data/caddy_like.csv --long-tail 18478
"""

from __future__ import annotations

import argparse
import logging
import sys

from zsugr_core.config import setup_logging
from zsugr_core.data.manifest import long_tail_counts, write_synthetic_manifest
from zsugr_core.ui.messages import CADDIAN_CLASSES


def main() -> int:
    setup_logging(logging.INFO)
    parser = argparse.ArgumentParser(description="Синтетический манифест жестов CADDIAN")
    parser.add_argument("path")
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--per-class", type=int, help="одинаковое число образцов в каждом классе")
    group.add_argument("--long-tail", type=int, help="общее число образцов с длиннохвостым распределением")
    args = parser.parse_args()

    n_classes = len(CADDIAN_CLASSES)
    if args.per_class is not None:
        counts = [args.per_class] * n_classes
    else:
        counts = long_tail_counts(args.long_tail, n_classes)
    path = write_synthetic_manifest(args.path, counts, CADDIAN_CLASSES)
    logging.info("Манифест %s: %d записей, по классам %s", path, sum(counts), counts)
    return 0


if __name__ == "__main__":
    sys.exit(main())
