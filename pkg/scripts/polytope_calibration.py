"""Worst corner error of the square vertex-recovery experiment across seeds.

The 0.15 tolerance in the geometry tests is set from this run.
"""

import argparse
import time

import numpy as np

from memgan.geometry import PolytopeProblem, match_vertices, optimize_polytope, uniform_square

SQUARE = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--iterations", type=int, default=300)
    args = ap.parse_args()
    worst = 0.0
    for seed in range(args.seeds):
        t = time.time()
        res = optimize_polytope(PolytopeProblem(uniform_square(500, seed), 4, iterations=args.iterations, seed=seed))
        err = match_vertices(res.memory, SQUARE).max()
        worst = max(worst, err)
        print(f"seed {seed}: max corner error {err:.4f}  coverage {res.coverage_term:.2e}  "
              f"fit {res.fit_term:.2e}  {time.time() - t:.1f}s", flush=True)
    print(f"worst corner error over {args.seeds} seeds: {worst:.4f}")


if __name__ == "__main__":
    main()
