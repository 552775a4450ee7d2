"""Speedup of the tensorized sampler against sample count and spatial grid size.

Usage: python scripts/speedup_bench.py --config configs/desk.json --out runs/bench
"""

import argparse
import csv
import os

from emgtensor.cli import cmd_bench
from emgtensor.config import ExperimentConfig


def show(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    print(os.path.basename(path))
    for row in rows:
        print("  " + "  ".join(f"{c[:12]:>12}" for c in row))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/desk.json")
    ap.add_argument("--out", default="runs/bench")
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()
    cfg = ExperimentConfig.load(args.config)
    cmd_bench(cfg, args.out, cfg.seed if args.seed is None else args.seed)
    show(os.path.join(args.out, "speedup_vs_samples.csv"))
    show(os.path.join(args.out, "speedup_vs_grid.csv"))


if __name__ == "__main__":
    main()
