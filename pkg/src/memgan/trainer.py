"""Alternating D -> E -> G -> M training loop, checkpoints and metrics.

Each step runs ``k_steps`` discriminator updates (fresh memory samples each
time), then one shared forward pass from which the encoder, generator and
memory gradients are taken separately and applied by their own Adam
optimizers.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig
from .data import OneClassSplit, batch_iterator, load_dataset, make_one_class_split
from .memory import sample_convex
from .networks import MemGAN, NetSpec
from .objectives import (
    LossReport,
    LossWeights,
    NonFiniteLossError,
    discriminator_loss,
    encoder_objective,
    generator_objective,
    loss_parts,
    memory_objective,
)

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"MEMGANCK"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sI32sQ")  # magic, version, sha256(payload), payload length

METRIC_COLUMNS = ("epoch", "step", "d_loss", "e_obj", "g_obj", "l_cyc", "l_proj", "l_mi", "wall_time")
BETAS = (0.5, 0.999)


class CheckpointError(RuntimeError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


@dataclass
class MetricsRow:
    epoch: int
    step: int
    d_loss: float
    e_obj: float
    g_obj: float
    l_cyc: float
    l_proj: float
    l_mi: float
    wall_time: float = 0.0


@dataclass
class Trainer:
    """Model state plus everything needed to continue training it exactly."""

    config: TrainConfig
    state: MemGAN
    optimizers: dict[str, torch.optim.Optimizer]
    sampler: torch.Generator
    epoch: int = 0
    step: int = 0
    history: list[MetricsRow] = field(default_factory=list)

    @classmethod
    def create(cls, config: TrainConfig) -> "Trainer":
        spec = NetSpec.for_dataset(config.dataset, config.latent_dim, config.channels)
        state = MemGAN(spec, config.n_mem, seed=config.seed, dtype=config.torch_dtype, config=config.to_dict(),
                   mem_init_std=config.mem_init_std)
        return cls(config, state, make_optimizers(state, config), make_sampler(config.seed))

    @property
    def weights(self) -> LossWeights:
        c = self.config
        return LossWeights(c.weight("cyc"), c.weight("proj"), c.weight("mi"))

    def train_step(self, x: torch.Tensor) -> LossReport:
        return train_step(self.state, x, self.optimizers, self.sampler, self.config.k_steps, self.weights)


def make_sampler(seed: int) -> torch.Generator:
    sub = int(np.random.SeedSequence([seed, 1]).generate_state(1, dtype=np.uint64)[0] >> 1)
    return torch.Generator().manual_seed(sub)


def make_optimizers(state: MemGAN, config: TrainConfig) -> dict[str, torch.optim.Optimizer]:
    return {
        "discriminator": torch.optim.Adam(state.discriminator.parameters(), lr=config.lr_d, betas=BETAS),
        "encoder": torch.optim.Adam(state.encoder.parameters(), lr=config.lr_e, betas=BETAS),
        "generator": torch.optim.Adam(state.generator.parameters(), lr=config.lr_g, betas=BETAS),
        "memory": torch.optim.Adam([state.memory], lr=config.lr_m, betas=BETAS),
    }


def _apply(opt: torch.optim.Optimizer, params: list[torch.nn.Parameter], grads) -> None:
    for p, g in zip(params, grads):
        p.grad = torch.zeros_like(p) if g is None else g
    opt.step()
    opt.zero_grad(set_to_none=True)


def _check(name: str, value: torch.Tensor) -> float:
    v = float(value.detach())
    if not np.isfinite(v):
        raise NonFiniteLossError(f"non-finite {name} ({v}); aborting the run")
    return v


def train_step(
    state: MemGAN,
    x: torch.Tensor,
    optimizers: dict[str, torch.optim.Optimizer],
    sampler: torch.Generator,
    k_steps: int = 1,
    weights: LossWeights = LossWeights(),
) -> LossReport:
    """One step of the four-player update: k x D, then E, G, M."""
    state.train()
    m = x.shape[0]
    M = state.memory

    for _ in range(k_steps):
        z_mem, _ = sample_convex(M.detach(), m, sampler)
        d_loss = discriminator_loss(state, x, z_mem)
        d_val = _check("d_loss", d_loss)
        opt = optimizers["discriminator"]
        opt.zero_grad(set_to_none=True)
        d_loss.backward()
        opt.step()
        opt.zero_grad(set_to_none=True)

    _, mi_alphas = sample_convex(M.detach(), m, sampler)
    z_gen, _ = sample_convex(M.detach(), m, sampler)
    parts = loss_parts(state, x, mi_alphas, z_gen)
    e_obj = encoder_objective(parts, weights)
    g_obj = generator_objective(parts, weights)
    m_obj = memory_objective(parts, weights)

    report = LossReport(
        d_loss=d_val,
        e_obj=_check("e_obj", e_obj),
        g_obj=_check("g_obj", g_obj),
        l_cyc=_check("l_cyc", parts.l_cyc),
        l_proj=_check("l_proj", parts.l_proj),
        l_mi=_check("l_mi", parts.l_mi),
    )

    enc = list(state.encoder.parameters())
    gen = list(state.generator.parameters())
    g_e = torch.autograd.grad(e_obj, enc, retain_graph=True, allow_unused=True)
    g_g = torch.autograd.grad(g_obj, gen, retain_graph=True, allow_unused=True)
    g_m = torch.autograd.grad(m_obj, [M], allow_unused=True)
    _apply(optimizers["encoder"], enc, g_e)
    _apply(optimizers["generator"], gen, g_g)
    _apply(optimizers["memory"], [M], g_m)
    return report


# ---------------------------------------------------------------------------
# checkpoints


def _rng_state(trainer: Trainer) -> dict:
    return {"sampler": trainer.sampler.get_state(), "torch": torch.get_rng_state()}


def save_checkpoint(trainer: Trainer, path: str | Path) -> Path:
    path = Path(path)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": trainer.config.to_dict(),
        "spec": asdict(trainer.state.spec),
        "model": trainer.state.state_dict(),
        "optimizers": {k: o.state_dict() for k, o in trainer.optimizers.items()},
        "rng": _rng_state(trainer),
        "epoch": trainer.epoch,
        "step": trainer.step,
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    body = buf.getvalue()
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, hashlib.sha256(body).digest(), len(body))
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".part")
    try:
        with open(tmp, "wb") as fh:
            fh.write(header)
            fh.write(body)
        tmp.replace(path)
    except OSError as exc:
        log.warning("checkpoint write to %s failed (%s); last complete checkpoint is still on disk", path, exc)
        tmp.unlink(missing_ok=True)
        raise
    return path


def read_checkpoint(path: str | Path) -> dict:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"corrupt checkpoint {path}: truncated header")
    magic, version, digest, length = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"corrupt checkpoint {path}: not a MEMGAN checkpoint")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint {path} has format version {version}; this reader supports {CHECKPOINT_VERSION}"
        )
    body = raw[_HEADER.size:]
    if len(body) != length or hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"corrupt checkpoint {path}: payload truncated or modified")
    return torch.load(io.BytesIO(body), weights_only=False)


def load_trainer(path: str | Path) -> Trainer:
    payload = read_checkpoint(path)
    config = TrainConfig.from_dict(payload["config"])
    spec = NetSpec(**{**payload["spec"], "shape": tuple(payload["spec"]["shape"]),
                      "channels": tuple(payload["spec"]["channels"])})
    state = MemGAN(spec, config.n_mem, seed=config.seed, dtype=config.torch_dtype, config=config.to_dict(),
                   mem_init_std=config.mem_init_std)
    state.load_state_dict(payload["model"])
    optimizers = make_optimizers(state, config)
    for k, opt in optimizers.items():
        opt.load_state_dict(payload["optimizers"][k])
    sampler = torch.Generator()
    sampler.set_state(payload["rng"]["sampler"])
    torch.set_rng_state(payload["rng"]["torch"])
    return Trainer(config, state, optimizers, sampler, epoch=payload["epoch"], step=payload["step"])


def load_checkpoint(path: str | Path) -> MemGAN:
    state = load_trainer(path).state
    state.eval()
    return state


# ---------------------------------------------------------------------------
# full runs


def write_metrics(rows: list[MetricsRow], path: str | Path, append: bool = False) -> None:
    path = Path(path)
    new = not append or not path.exists()
    with open(path, "w" if new else "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([repr(getattr(r, c)) if isinstance(getattr(r, c), float) else getattr(r, c)
                        for c in METRIC_COLUMNS])


def read_metrics(path: str | Path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        return [
            MetricsRow(int(r["epoch"]), int(r["step"]), *(float(r[c]) for c in METRIC_COLUMNS[2:]))
            for r in csv.DictReader(fh)
        ]


def load_split(config: TrainConfig) -> OneClassSplit:
    train = load_dataset(config.dataset, "train", config.cache_dir)
    test = load_dataset(config.dataset, "test", config.cache_dir)
    return make_one_class_split(train, test, config.normal_class)


def train(
    config: TrainConfig,
    out_dir: str | Path | None = None,
    split: OneClassSplit | None = None,
    resume: str | Path | None = None,
) -> Trainer:
    """Train for ``config.epochs`` epochs, checkpointing after every epoch.

    Writes ``metrics.csv``, ``epoch_XXX.ckpt`` (the last ``keep_checkpoints``
    are retained) and ``final.ckpt`` into ``out_dir``.
    """
    out = Path(out_dir if out_dir is not None else config.out)
    out.mkdir(parents=True, exist_ok=True)
    if split is None:
        split = load_split(config)

    if resume is not None:
        trainer = load_trainer(resume)
        trainer.config = trainer.config.replace(epochs=config.epochs)
    else:
        trainer = Trainer.create(config)
        write_metrics([], out / "metrics.csv")

    t0 = time.perf_counter()
    dtype = config.torch_dtype
    while trainer.epoch < config.epochs:
        rows = []
        for x in batch_iterator(split, config.batch_size, config.seed, trainer.epoch, dtype=dtype):
            rep = trainer.train_step(x)
            wall = time.perf_counter() - t0 if config.wall_time else 0.0
            rows.append(MetricsRow(trainer.epoch, trainer.step, **asdict(rep), wall_time=wall))
            trainer.step += 1
        trainer.epoch += 1
        trainer.history.extend(rows)
        write_metrics(rows, out / "metrics.csv", append=True)
        last = rows[-1]
        log.info("epoch %d/%d  d=%.4f e=%.4f g=%.4f cyc=%.4f proj=%.4f mi=%.4f",
                 trainer.epoch, config.epochs, last.d_loss, last.e_obj, last.g_obj,
                 last.l_cyc, last.l_proj, last.l_mi)
        save_checkpoint(trainer, out / f"epoch_{trainer.epoch:03d}.ckpt")
        stale = sorted(out.glob("epoch_*.ckpt"))[:-config.keep_checkpoints]
        for p in stale:
            p.unlink()

    save_checkpoint(trainer, out / "final.ckpt")
    trainer.state.eval()
    return trainer
