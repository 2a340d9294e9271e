import os

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from memgan.config import TrainConfig
from memgan.data import DatasetError, LabeledImageSet, OneClassSplit, load_dataset, make_one_class_split
from memgan.networks import MemGAN, NetSpec

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

TINY = NetSpec((1, 28, 28), latent_dim=4, channels=(4, 8, 8), disc_z_units=16, disc_joint_units=16)


def tiny_state(n_mem: int = 5, seed: int = 0, dtype=torch.float64) -> MemGAN:
    return MemGAN(TINY, n_mem, seed=seed, dtype=dtype)


def toy_split(per_class: int = 40, seed: int = 0, normal_class: int = 0) -> OneClassSplit:
    """Two-class 28x28 toy data: class 0 bright top half, class 1 bright bottom half."""
    rng = np.random.default_rng(seed)

    def make(count):
        labels = np.repeat([0, 1], count)
        images = rng.uniform(0, 0.2, size=(2 * count, 1, 28, 28)).astype(np.float32)
        images[labels == 0, :, :14] += 0.7
        images[labels == 1, :, 14:] += 0.7
        return LabeledImageSet(np.clip(images, 0, 1), labels, "mnist", "train")

    train = make(per_class)
    test = make(per_class // 2)
    test = LabeledImageSet(test.images, test.labels, "mnist", "test")
    return make_one_class_split(train, test, normal_class)


def toy_config(**kw) -> TrainConfig:
    base = dict(dataset="mnist", normal_class=0, n_mem=5, latent_dim=4, channels=(4, 8, 8),
                batch_size=16, epochs=1, dtype="float64", wall_time=False, seed=0)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture
def state():
    return tiny_state()


@pytest.fixture(scope="session")
def mnist():
    try:
        return load_dataset("mnist", "train"), load_dataset("mnist", "test")
    except DatasetError as exc:
        pytest.skip(f"MNIST unavailable: {exc}")


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
