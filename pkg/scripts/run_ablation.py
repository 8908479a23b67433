"""Fusion and corrector-input ablations on the synthetic benchmark, averaged over seeds.

Usage: python scripts/run_ablation.py --variants gaitmix-concat,gaitmix-padding --seeds 0,1,2
"""

import argparse
import csv
import logging
from pathlib import Path

import numpy as np

from gaitref.benchmark import ABLATIONS, BenchmarkConfig, RunCache

DEFAULT_VARIANTS = ("gaitmix-concat", "gaitmix-padding", "gaitref-concat", "gaitref-padding",
                    "scn-no-FS", "scn-no-FJ", "scn-no-FJP", "gaitmix-average", "gaitmix-gaussian")


def parse_args(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--variants", default=",".join(DEFAULT_VARIANTS),
                    help=f"comma-separated names from: {', '.join(ABLATIONS)}")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--iterations", type=int, default=BenchmarkConfig.iterations)
    ap.add_argument("--out", type=Path, default=Path("runs/ablation"))
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    names = args.variants.split(",")
    seeds = [int(s) for s in args.seeds.split(",")]
    cache = RunCache(BenchmarkConfig(iterations=args.iterations))
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "mean_rank1", "mean_mAP", "mean_mINP"] + [f"rank1_seed{s}" for s in seeds])
        for name in names:
            runs = cache.seeds(name, seeds)
            r1 = [r.rank1 for r in runs]
            row = [name, np.mean(r1), np.mean([r.report.mAP for r in runs]), np.mean([r.report.mINP for r in runs])]
            w.writerow(row + r1)
            print(f"{name:<18} rank-1 {row[1]:.3f}  mAP {row[2]:.3f}  mINP {row[3]:.3f}", flush=True)


if __name__ == "__main__":
    main()
