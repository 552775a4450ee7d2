"""Precompute the solution tensors and print HT ranks and leading singular values per node.

Usage: python scripts/rank_profile.py --config configs/desk_small.json --out runs/ranks
"""

import argparse
from collections import defaultdict

from emgtensor.cli import cmd_precompute
from emgtensor.config import ExperimentConfig
from emgtensor.param_tensorization import rank_report, singular_value_report


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/desk_small.json")
    ap.add_argument("--out", default="runs/ranks")
    ap.add_argument("--top", type=int, default=6, help="singular values shown per node")
    args = ap.parse_args()
    sol = cmd_precompute(ExperimentConfig.load(args.config), args.out)
    sv = defaultdict(list)
    for d, label, _, value in singular_value_report(sol):
        sv[d, label].append(value)
    for d, label, rank in rank_report(sol):
        vals = sv.get((d, label), [])
        lead = " ".join(f"{v / vals[0]:.1e}" for v in vals[: args.top]) if vals else ""
        print(f"direction {d}  {label:<12} rank {rank:4d}   {lead}")
    print(f"rank tables written to {args.out}/ranks.csv and {args.out}/singular_values.csv")


if __name__ == "__main__":
    main()
