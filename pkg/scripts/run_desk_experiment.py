"""Precompute, then run paired SA and TA chains and print a statistics table.

Usage: python scripts/run_desk_experiment.py --config configs/desk.json --out runs/desk
"""

import argparse
import json
import os

from emgtensor.cli import cmd_precompute, cmd_sample
from emgtensor.config import ExperimentConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/desk.json")
    ap.add_argument("--out", default=None)
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()
    cfg = ExperimentConfig.load(args.config)
    out = args.out or cfg.output_dir
    seed = cfg.seed if args.seed is None else args.seed
    sol = cmd_precompute(cfg, out)
    print(f"precomputation: {sol.T_p:.2f} s, storage {sol.storage()} of {sol.full_storage()} entries")
    for mode in ("TA", "SA"):
        cmd_sample(cfg, out, mode, seed)
    print(f"{'':6}{'rate':>8}" + "".join(f"{'mean' + str(k):>10}{'MAD' + str(k):>10}{'Var' + str(k):>10}"
                                         for k in (1, 2, 3)) + f"{'dir freq':>22}")
    for mode in ("SA", "TA"):
        with open(os.path.join(out, f"stats_{mode}.json")) as fh:
            st = json.load(fh)
        cells = "".join(f"{st['mean'][k]:10.4f}{st['mad'][k]:10.4f}{st['var'][k]:10.4f}" for k in range(3))
        freq = " ".join(f"{f:.3f}" for f in st["direction_freq"])
        print(f"{mode:6}{100 * st['acceptance_rate']:7.2f}%{cells}{freq:>22}")
    with open(os.path.join(out, "stats_SA.json")) as fh:
        timing = json.load(fh)["timing"]
    print(f"speedup at J={cfg.sampling.J_samples}: measured {timing['speedup_measured']:.2f}, "
          f"model {timing['speedup_model']:.2f}")


if __name__ == "__main__":
    main()
