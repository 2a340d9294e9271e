"""Encoder, generator and joint (image, code) discriminator.

DCGAN-style reference architectures: three stride-2 conv stages
(32/64/128 channels, d=64) for 28x28 MNIST and four (64/128/256/512, d=256)
for 32x32 CIFAR-10. E and G use batch norm; D does not.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import torch
import torch.nn as nn

from .memory import INIT_STD, init_memory, project

PROB_EPS = 1e-7


@contextmanager
def frozen_running_stats(*modules: nn.Module):
    """Batch norm keeps normalizing with batch statistics but its running
    averages are left untouched (momentum 0) inside the block."""
    bns = [m for mod in modules for m in mod.modules() if isinstance(m, nn.modules.batchnorm._BatchNorm)]
    saved = [bn.momentum for bn in bns]
    for bn in bns:
        bn.momentum = 0.0
    try:
        yield
    finally:
        for bn, mom in zip(bns, saved):
            bn.momentum = mom


@dataclass
class NetSpec:
    shape: tuple[int, int, int]
    latent_dim: int
    channels: tuple[int, ...]
    disc_z_units: int = 512
    disc_joint_units: int = 1024
    slope: float = 0.2
    norm: str = "batch"  # batch | none

    @classmethod
    def for_dataset(cls, name: str, latent_dim: int | None = None, channels=None) -> "NetSpec":
        if name == "mnist":
            spec = cls((1, 28, 28), 64, (32, 64, 128))
        elif name == "cifar10":
            spec = cls((3, 32, 32), 256, (64, 128, 256, 512))
        else:
            raise ValueError(f"no reference architecture for dataset {name!r}")
        if latent_dim is not None:
            spec.latent_dim = latent_dim
        if channels is not None:
            spec.channels = tuple(channels)
        return spec


def _stage_sizes(size: int, stages: int) -> list[int]:
    sizes = [size]
    for _ in range(stages):
        sizes.append((sizes[-1] + 1) // 2)
    return sizes


def _norm(kind: str, ch: int) -> nn.Module:
    return nn.BatchNorm2d(ch) if kind == "batch" else nn.Identity()


def _conv_stack(spec: NetSpec, norm: str) -> tuple[nn.Sequential, int]:
    layers = []
    c_in = spec.shape[0]
    sizes = _stage_sizes(spec.shape[1], len(spec.channels))
    for i, c_out in enumerate(spec.channels):
        # k=4 halves even sizes, k=3 rounds odd sizes up (7 -> 4)
        k = 4 if sizes[i] % 2 == 0 else 3
        layers.append(nn.Conv2d(c_in, c_out, k, 2, 1))
        if i > 0:
            layers.append(_norm(norm, c_out))
        layers.append(nn.LeakyReLU(spec.slope))
        c_in = c_out
    return nn.Sequential(*layers), c_in * sizes[-1] ** 2


class Encoder(nn.Module):
    def __init__(self, spec: NetSpec):
        super().__init__()
        self.spec = spec
        convs, flat = _conv_stack(spec, spec.norm)
        # linear head: codes are unbounded
        self.net = nn.Sequential(*convs, nn.Flatten(), nn.Linear(flat, spec.latent_dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or tuple(x.shape[1:]) != self.spec.shape:
            raise ValueError(f"encoder expects (m, {self.spec.shape}) images, got {tuple(x.shape)}")
        out = self.net(x)
        if not torch.isfinite(out).all():
            h = x
            for i, layer in enumerate(self.net):
                h = layer(h)
                if not torch.isfinite(h).all():
                    raise FloatingPointError(f"non-finite activation in encoder layer {i} ({layer})")
        return out


class Generator(nn.Module):
    def __init__(self, spec: NetSpec):
        super().__init__()
        self.spec = spec
        chans = list(reversed(spec.channels))
        sizes = list(reversed(_stage_sizes(spec.shape[1], len(chans))))
        self.base = (chans[0], sizes[0])
        self.fc = nn.Sequential(
            nn.Linear(spec.latent_dim, chans[0] * sizes[0] ** 2),
            nn.BatchNorm1d(chans[0] * sizes[0] ** 2) if spec.norm == "batch" else nn.Identity(),
            nn.LeakyReLU(spec.slope),
        )
        layers = []
        outs = chans[1:] + [spec.shape[0]]
        for i, (c_in, c_out) in enumerate(zip(chans, outs)):
            s_in, s_out = sizes[i], sizes[i + 1]
            if s_out == 2 * s_in:
                layers.append(nn.ConvTranspose2d(c_in, c_out, 4, 2, 1))
            else:
                layers.append(nn.ConvTranspose2d(c_in, c_out, 3, 2, 1, output_padding=s_out - (2 * s_in - 1)))
            last = i == len(chans) - 1
            if not last:
                layers.append(_norm(spec.norm, c_out))
                layers.append(nn.LeakyReLU(spec.slope))
        layers.append(nn.Tanh())
        self.net = nn.Sequential(*layers)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.dim() != 2 or z.shape[1] != self.spec.latent_dim:
            raise ValueError(f"generator expects (m, {self.spec.latent_dim}) codes, got {tuple(z.shape)}")
        c, s = self.base
        return self.net(self.fc(z).view(-1, c, s, s))


class Discriminator(nn.Module):
    """D(x, z): probability that the pair came from the encoder side."""

    def __init__(self, spec: NetSpec):
        super().__init__()
        self.spec = spec
        convs, flat = _conv_stack(spec, "none")
        self.x_path = nn.Sequential(*convs, nn.Flatten())
        u = spec.disc_z_units
        self.z_path = nn.Sequential(
            nn.Linear(spec.latent_dim, u), nn.LeakyReLU(spec.slope),
            nn.Linear(u, u), nn.LeakyReLU(spec.slope),
        )
        self.joint = nn.Sequential(
            nn.Linear(flat + u, spec.disc_joint_units), nn.LeakyReLU(spec.slope),
            nn.Linear(spec.disc_joint_units, 1),
        )

    def logits(self, x: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        if x.shape[0] != z.shape[0]:
            raise ValueError(f"batch mismatch: {x.shape[0]} images vs {z.shape[0]} codes")
        h = torch.cat([self.x_path(x), self.z_path(z)], dim=1)
        return self.joint(h).squeeze(1)

    def forward(self, x: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(x, z)).clamp(PROB_EPS, 1 - PROB_EPS)


class MemGAN(nn.Module):
    """Model state: E, G, D and the memory matrix, plus a config snapshot."""

    def __init__(self, spec: NetSpec, n_mem: int, seed: int = 0, dtype: torch.dtype = torch.float32,
                 config: dict | None = None, mem_init_std: float = INIT_STD):
        super().__init__()
        self.spec = spec
        self.config = dict(config or {})
        torch.manual_seed(seed)
        self.encoder = Encoder(spec)
        self.generator = Generator(spec)
        self.discriminator = Discriminator(spec)
        self.memory = nn.Parameter(init_memory(n_mem, spec.latent_dim, seed, init_std=mem_init_std))
        self.to(dtype)

    @property
    def n_mem(self) -> int:
        return self.memory.shape[0]

    @property
    def dtype(self) -> torch.dtype:
        return self.memory.dtype

    def reconstruct(self, x: torch.Tensor) -> torch.Tensor:
        return self.generator(project(self.memory, self.encoder(x)))


def encode(state: MemGAN, x: torch.Tensor) -> torch.Tensor:
    return state.encoder(x)


def generate(state: MemGAN, z: torch.Tensor) -> torch.Tensor:
    return state.generator(z)


def discriminate(state: MemGAN, x: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    return state.discriminator(x, z)
