"""Losses and per-player objectives.

Auxiliary losses (per-minibatch means):

    l_cyc  = ||x - G(P(E(x)))||          reconstruction through the memory
    l_proj = ||E(x) - P(E(x))||          code vs. its memory readout
    l_mi   = -sum_i a_i log a'_i         a' = softmax(M E(G(M^T a)))

Norms are plain Euclidean norms over the flattened image / code.

``live`` selects which player's parameters stay attached to the autograd
graph: ``"encoder"``, ``"generator"``, ``"discriminator"``, ``"memory"``, or
``None`` for all of them. Everything else is evaluated as a constant, so an
objective built with ``live="encoder"`` has an exactly-zero gradient for
every other player.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch.func import functional_call

from .memory import attend, project
from .networks import MemGAN, frozen_running_stats

ATTN_EPS = 1e-12
PLAYERS = ("encoder", "generator", "discriminator", "memory")


class NonFiniteLossError(FloatingPointError):
    pass


def _player(state: MemGAN, name: str, live: str | None):
    module = getattr(state, name)
    if live is None or live == name:
        return module
    frozen = {k: v.detach() for k, v in module.named_parameters()}
    return lambda *args: functional_call(module, frozen, args)


def _memory(state: MemGAN, live: str | None) -> torch.Tensor:
    return state.memory if live in (None, "memory") else state.memory.detach()


def _flat_norm(t: torch.Tensor) -> torch.Tensor:
    return t.flatten(1).norm(dim=1)


def cross_entropy(alpha: torch.Tensor, alpha_prime: torch.Tensor) -> torch.Tensor:
    """Per-row ``-sum_i alpha_i log alpha'_i`` with ``alpha'`` clamped at 1e-12."""
    return -(alpha * alpha_prime.clamp_min(ATTN_EPS).log()).sum(dim=-1)


def check_simplex(alphas: torch.Tensor, tol: float = 1e-6) -> None:
    if (alphas < -tol).any() or ((alphas.sum(dim=-1) - 1).abs() > tol).any():
        raise ValueError("attention weights must lie on the probability simplex")


def cycle_residual(state: MemGAN, x: torch.Tensor, live: str | None = None) -> torch.Tensor:
    """Per-example ``||x - G(P(E(x)))||``."""
    E, G = _player(state, "encoder", live), _player(state, "generator", live)
    rec = G(project(_memory(state, live), E(x)))
    return _flat_norm(x - rec)


def cycle_loss(state: MemGAN, x: torch.Tensor, live: str | None = None) -> torch.Tensor:
    return cycle_residual(state, x, live).mean()


def projection_loss(state: MemGAN, x: torch.Tensor, live: str | None = None) -> torch.Tensor:
    E = _player(state, "encoder", live)
    M = _memory(state, live)
    z = E(x)
    return (z - project(M, z)).norm(dim=1).mean()


def mutual_info_loss(state: MemGAN, alphas: torch.Tensor, live: str | None = None) -> torch.Tensor:
    check_simplex(alphas)
    E, G = _player(state, "encoder", live), _player(state, "generator", live)
    M = _memory(state, live)
    z_back = E(G(alphas @ M))
    return cross_entropy(alphas, attend(M, z_back)).mean()


def discriminator_loss(state: MemGAN, x: torch.Tensor, z_mem: torch.Tensor) -> torch.Tensor:
    """``-log D(x, E(x)) - log(1 - D(G(z), z))``; E, G and M are constants here."""
    D = state.discriminator
    with torch.no_grad(), frozen_running_stats(state.encoder, state.generator):
        e = state.encoder(x)
        fake = state.generator(z_mem)
    z_mem = z_mem.detach()
    return (-D(x, e).log() - (1 - D(fake, z_mem)).log()).mean()


@dataclass
class LossParts:
    """One shared forward pass worth of losses (tensors, graph attached)."""

    l_cyc: torch.Tensor
    l_proj: torch.Tensor
    l_mi: torch.Tensor
    adv_e: torch.Tensor  # mean log D(x, E(x))
    adv_g: torch.Tensor  # mean -log D(G(z), z)


def loss_parts(
    state: MemGAN,
    x: torch.Tensor,
    mi_alphas: torch.Tensor,
    z_gen: torch.Tensor,
    live: str | None = None,
) -> LossParts:
    """Forward everything the E, G and M updates need, sharing E(x) and G(P(E(x))).

    Only the scoring path (E on real images, G on their memory readouts)
    updates batch-norm running statistics; eval-mode scoring then sees the
    same input distributions it was normalized for.
    """
    check_simplex(mi_alphas)
    E = _player(state, "encoder", live)
    G = _player(state, "generator", live)
    D = _player(state, "discriminator", live)
    M = _memory(state, live)

    e = E(x)
    p = project(M, e)
    l_cyc = _flat_norm(x - G(p)).mean()
    l_proj = (e - p).norm(dim=1).mean()
    z_gen = z_gen.detach()
    with frozen_running_stats(state.encoder, state.generator):
        l_mi = cross_entropy(mi_alphas, attend(M, E(G(mi_alphas @ M)))).mean()
        fake = G(z_gen)

    adv_e = D(x, e).log().mean()
    adv_g = -D(fake, z_gen).log().mean()
    return LossParts(l_cyc, l_proj, l_mi, adv_e, adv_g)


@dataclass(frozen=True)
class LossWeights:
    cyc: float = 1.0
    proj: float = 1.0
    mi: float = 1.0


def encoder_objective(parts: LossParts, w: LossWeights = LossWeights()) -> torch.Tensor:
    return parts.adv_e + w.cyc * parts.l_cyc + w.proj * parts.l_proj + w.mi * parts.l_mi


def generator_objective(parts: LossParts, w: LossWeights = LossWeights()) -> torch.Tensor:
    # non-saturating adversarial term; no projection loss for G
    return parts.adv_g + w.cyc * parts.l_cyc + w.mi * parts.l_mi


def memory_objective(parts: LossParts, w: LossWeights = LossWeights()) -> torch.Tensor:
    return w.cyc * parts.l_cyc + w.proj * parts.l_proj + w.mi * parts.l_mi


@dataclass
class LossReport:
    d_loss: float
    e_obj: float
    g_obj: float
    l_cyc: float
    l_proj: float
    l_mi: float

    def check_finite(self) -> None:
        for name, value in vars(self).items():
            if not math.isfinite(value):
                raise NonFiniteLossError(f"loss term {name} became {value}")
