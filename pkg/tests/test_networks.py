import pytest
import torch

from memgan.networks import MemGAN, NetSpec, discriminate, encode, frozen_running_stats, generate

from .conftest import TINY, tiny_state


@pytest.fixture(scope="module")
def mnist_state():
    return MemGAN(NetSpec.for_dataset("mnist"), 50, seed=0)


@pytest.fixture(scope="module")
def cifar_state():
    return MemGAN(NetSpec.for_dataset("cifar10"), 100, seed=0)


def test_mnist_codes(mnist_state):
    x = torch.rand(64, 1, 28, 28) * 2 - 1
    assert encode(mnist_state, x).shape == (64, 64)


def test_cifar_single_code(cifar_state):
    cifar_state.eval()
    assert encode(cifar_state, torch.rand(1, 3, 32, 32) * 2 - 1).shape == (1, 256)
    cifar_state.train()


def test_wrong_channels_rejected(mnist_state):
    with pytest.raises(ValueError, match="encoder expects"):
        encode(mnist_state, torch.zeros(2, 3, 28, 28))


def test_generator_range_and_shape(mnist_state):
    z = torch.randn(8, 64) * 50
    out = generate(mnist_state, z)
    assert out.shape == (8, 1, 28, 28)
    assert out.min() >= -1 and out.max() <= 1


def test_decode_memory_rows(mnist_state):
    assert generate(mnist_state, mnist_state.memory.detach()).shape == (50, 1, 28, 28)


def test_generator_width_mismatch(mnist_state):
    with pytest.raises(ValueError, match="generator expects"):
        generate(mnist_state, torch.zeros(2, 63))


def test_discriminator_range(mnist_state):
    x = torch.rand(64, 1, 28, 28) * 2 - 1
    d = discriminate(mnist_state, x, torch.randn(64, 64) * 1e4)
    assert d.shape == (64,)
    assert (d > 0).all() and (d < 1).all()
    assert torch.isfinite(d.log()).all() and torch.isfinite((1 - d).log()).all()


def test_discriminator_batch_mismatch(mnist_state):
    with pytest.raises(ValueError, match="batch mismatch"):
        discriminate(mnist_state, torch.zeros(3, 1, 28, 28), torch.zeros(2, 64))


@pytest.mark.parametrize("name", ["mnist", "cifar10"])
def test_round_trip_shape(name):
    spec = NetSpec.for_dataset(name, channels=(4, 8, 8) if name == "mnist" else (4, 8, 8, 8))
    state = MemGAN(spec, 10, seed=0)
    x = torch.rand(3, *spec.shape) * 2 - 1
    assert generate(state, encode(state, x)).shape == x.shape


def test_eval_mode_deterministic():
    state = tiny_state()
    state.eval()
    x = torch.rand(4, 1, 28, 28, dtype=torch.float64)
    assert torch.equal(state.reconstruct(x), state.reconstruct(x))


def test_same_seed_same_parameters():
    a, b = tiny_state(seed=5), tiny_state(seed=5)
    for (ka, va), (kb, vb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert ka == kb and torch.equal(va, vb)


def test_all_networks_backpropagate():
    state = tiny_state()
    x = torch.rand(6, 1, 28, 28, dtype=torch.float64) * 2 - 1
    z = state.encoder(x)
    loss = state.generator(z).sum() + state.discriminator(x, z).log().sum()
    loss.backward()
    for name, p in state.named_parameters():
        if name == "memory":
            continue
        assert p.grad is not None and torch.isfinite(p.grad).all(), name


def test_non_finite_activation_reports_layer():
    state = tiny_state()
    with torch.no_grad():
        state.encoder.net[0].weight.fill_(float("inf"))
    with pytest.raises(FloatingPointError, match="layer 0"):
        state.encoder(torch.ones(2, 1, 28, 28, dtype=torch.float64))


def test_frozen_running_stats():
    state = tiny_state()
    bn = state.generator.fc[1]
    before = bn.running_mean.clone()
    with frozen_running_stats(state.generator):
        state.generator(torch.randn(8, TINY.latent_dim, dtype=torch.float64) + 3)
    assert torch.equal(bn.running_mean, before)
    assert bn.momentum == 0.1
    state.generator(torch.randn(8, TINY.latent_dim, dtype=torch.float64) + 3)
    assert not torch.equal(bn.running_mean, before)
