"""Where do encoded test codes sit relative to the memory hull?

Splits each code's hull distance into the part orthogonal to the affine
span of the memory units and reports containment at several eps values.

    python scripts/hull_geometry.py runs/mnist/class_1/seed_0/final.ckpt
"""

import argparse

import numpy as np

from memgan.evaluator import score_split
from memgan.memory import hull_distances, latent_scale
from memgan.trainer import load_split, load_trainer


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("checkpoint")
    ap.add_argument("--eps", type=float, nargs="+", default=[1e-2, 1e-1, 0.5, 1.0])
    args = ap.parse_args()

    trainer = load_trainer(args.checkpoint)
    scored = score_split(trainer.state, load_split(trainer.config))
    M = trainer.state.memory.detach().double().numpy()
    scale = latent_scale(M)
    centre = M.mean(0)
    _, s, vt = np.linalg.svd(M - centre, full_matrices=False)
    basis = vt[s > 1e-8 * s[0]]
    offset = scored.codes - centre
    orth = np.linalg.norm(offset - offset @ basis.T @ basis, axis=1)
    dist, _, _ = hull_distances(M, scored.codes)

    print(f"memory: n={len(M)} d={M.shape[1]} span rank {len(basis)} RMS radius {scale:.4f}")
    for flag, name in ((0, "normal"), (1, "abnormal")):
        sel = scored.flags == flag
        fr = "  ".join(f"eps={e:g}: {np.mean(dist[sel] <= e * scale):.3f}" for e in args.eps)
        print(f"{name:9s} median hull distance {np.median(dist[sel]):.4f} "
              f"(orthogonal to span {np.median(orth[sel]):.4f})  min {dist[sel].min():.4f}  {fr}")


if __name__ == "__main__":
    main()
