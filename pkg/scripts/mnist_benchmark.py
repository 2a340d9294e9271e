"""Multi-seed MNIST benchmark over a set of normal classes.

    python scripts/mnist_benchmark.py --classes 0 1 --runs 3 --out runs/mnist
    python scripts/mnist_benchmark.py --classes all --runs 3   # full table
"""

import argparse
import logging

import numpy as np

from memgan.config import TrainConfig
from memgan.evaluator import run_benchmark


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--classes", nargs="+", default=["0", "1"])
    ap.add_argument("--runs", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/mnist")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    classes = range(10) if args.classes == ["all"] else [int(c) for c in args.classes]
    means = []
    for c in classes:
        cfg = TrainConfig(dataset="mnist", normal_class=c, seed=args.seed)
        rep = run_benchmark(cfg, runs=args.runs, out_dir=f"{args.out}/class_{c}")
        means.append(rep.mean)
        print(f"class {c}: AUROC {100 * rep.mean:.1f} +- {100 * rep.std:.1f}  "
              f"runs {' '.join(f'{a:.4f}' for a in rep.aurocs)}", flush=True)
    print(f"average over {len(means)} classes: {100 * np.mean(means):.1f}")


if __name__ == "__main__":
    main()
