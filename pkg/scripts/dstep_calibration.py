"""Fraction of restarts on which one training step lowers the discriminator
loss on the same batch (toy data, double precision)."""

import numpy as np
import torch

from memgan.config import TrainConfig
from memgan.data import LabeledImageSet, batch_iterator, make_one_class_split
from memgan.memory import sample_convex
from memgan.objectives import discriminator_loss
from memgan.trainer import Trainer


def toy_split(seed, per_class=40):
    rng = np.random.default_rng(seed)
    labels = np.repeat([0, 1], per_class)
    images = rng.uniform(0, 0.2, size=(2 * per_class, 1, 28, 28)).astype(np.float32)
    images[labels == 0, :, :14] += 0.7
    images[labels == 1, :, 14:] += 0.7
    data = LabeledImageSet(np.clip(images, 0, 1), labels, "mnist", "train")
    return make_one_class_split(data, LabeledImageSet(data.images, labels, "mnist", "test"), 0)


def main(restarts=20):
    wins = 0
    for seed in range(restarts):
        cfg = TrainConfig(n_mem=5, latent_dim=4, channels=(4, 8, 8), batch_size=16, epochs=1,
                          dtype="float64", wall_time=False, seed=seed)
        tr = Trainer.create(cfg)
        x = next(batch_iterator(toy_split(seed), cfg.batch_size, seed, dtype=torch.float64))
        z, _ = sample_convex(tr.state.memory.detach(), x.shape[0], seed)
        with torch.no_grad():
            before = float(discriminator_loss(tr.state, x, z))
        tr.train_step(x)
        with torch.no_grad():
            after = float(discriminator_loss(tr.state, x, z))
        wins += after < before
        print(f"seed {seed}: d_loss {before:.4f} -> {after:.4f}")
    print(f"decreased on {wins}/{restarts} restarts")


if __name__ == "__main__":
    main()
