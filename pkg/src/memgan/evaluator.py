"""Anomaly scoring, AUROC and the benchmark / sweep / ablation protocols."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.stats import rankdata

from .config import AUX_LOSSES, TrainConfig
from .data import OneClassSplit, to_model_range
from .memory import hull_distances, latent_scale
from .networks import MemGAN
from .objectives import cycle_residual
from .trainer import load_split, train

log = logging.getLogger(__name__)


def anomaly_score(state: MemGAN, x: torch.Tensor) -> torch.Tensor:
    """``||x - G(P(E(x)))||`` per image; a single ``(C, H, W)`` image gives a scalar."""
    single = x.dim() == 3
    if single:
        x = x[None]
    with torch.no_grad():
        s = cycle_residual(state, x)
    return s[0] if single else s


def auroc(scores, flags) -> float:
    """Exact AUROC as a Mann-Whitney statistic; tied pairs count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    flags = np.asarray(flags).astype(bool)
    if scores.shape != flags.shape:
        raise ValueError("scores and flags must have the same length")
    n_pos, n_neg = int(flags.sum()), int((~flags).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both anomalous and normal examples")
    ranks = rankdata(scores)
    return float((ranks[flags].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


@dataclass
class Scored:
    scores: np.ndarray
    codes: np.ndarray
    flags: np.ndarray


def score_split(state: MemGAN, split: OneClassSplit, batch_size: int = 500) -> Scored:
    """Score and encode the whole test split (eval mode, no grad)."""
    state.eval()
    scores, codes = [], []
    images = split.test.images
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            x = torch.from_numpy(to_model_range(images[start:start + batch_size])).to(state.dtype)
            codes.append(state.encoder(x).double().numpy())
            scores.append(cycle_residual(state, x).double().numpy())
    return Scored(np.concatenate(scores), np.concatenate(codes), split.test_anomaly_flags)


@dataclass
class HullStats:
    eps: float
    scale: float
    normal_fraction: float
    abnormal_fraction: float
    normal_median_distance: float
    abnormal_median_distance: float


def hull_stats(M, codes: np.ndarray, flags: np.ndarray, eps: float) -> HullStats:
    """Containment (distance <= eps * RMS memory radius) and median hull distances."""
    scale = latent_scale(M)
    dist, _, _ = hull_distances(M, codes)
    normal, abnormal = dist[flags == 0], dist[flags == 1]
    thr = eps * scale
    return HullStats(
        eps=eps,
        scale=scale,
        normal_fraction=float(np.mean(normal <= thr)) if len(normal) else float("nan"),
        abnormal_fraction=float(np.mean(abnormal <= thr)) if len(abnormal) else float("nan"),
        normal_median_distance=float(np.median(normal)) if len(normal) else float("nan"),
        abnormal_median_distance=float(np.median(abnormal)) if len(abnormal) else float("nan"),
    )


@dataclass
class RunResult:
    seed: int
    auroc: float
    hull: HullStats
    run_dir: str


@dataclass
class EvalReport:
    dataset: str
    normal_class: int
    aurocs: list[float]
    mean: float
    std: float
    config: dict
    runs: list[RunResult] = field(default_factory=list)
    reference_runs: int = 10  # seeds per class in the published protocol

    @classmethod
    def from_runs(cls, config: TrainConfig, runs: list[RunResult]) -> "EvalReport":
        a = [r.auroc for r in runs]
        return cls(
            dataset=config.dataset,
            normal_class=config.normal_class,
            aurocs=a,
            mean=float(np.mean(a)),
            std=float(np.std(a)),
            config=config.to_dict(),
            runs=runs,
        )

    @property
    def hull_normal_fraction(self) -> float:
        return float(np.mean([r.hull.normal_fraction for r in self.runs]))

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, out_dir: str | Path, stem: str = "report") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        with open(out / f"{stem}_auroc.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["run", "seed", "auroc"])
            for i, r in enumerate(self.runs):
                w.writerow([i, r.seed, repr(r.auroc)])


def evaluate(state: MemGAN, split: OneClassSplit, eps: float) -> tuple[float, HullStats, Scored]:
    scored = score_split(state, split)
    stats = hull_stats(state.memory.detach(), scored.codes, scored.flags, eps)
    return auroc(scored.scores, scored.flags), stats, scored


def run_benchmark(
    config: TrainConfig,
    runs: int | None = None,
    out_dir: str | Path | None = None,
    split: OneClassSplit | None = None,
) -> EvalReport:
    """Train ``runs`` independent seeds (``seed, seed+1, ...``) and score the test split."""
    runs = config.runs if runs is None else runs
    if runs < 1:
        raise ValueError("runs must be >= 1")
    out = Path(out_dir if out_dir is not None else config.out)
    if split is None:
        split = load_split(config)
    results = []
    for r in range(runs):
        cfg = config.replace(seed=config.seed + r)
        run_dir = out / f"seed_{cfg.seed}"
        trainer = train(cfg, run_dir, split=split)
        a, stats, _ = evaluate(trainer.state, split, cfg.eps_hull)
        log.info("class %d seed %d: AUROC %.4f  hull normal %.3f abnormal %.3f",
                 cfg.normal_class, cfg.seed, a, stats.normal_fraction, stats.abnormal_fraction)
        results.append(RunResult(cfg.seed, a, stats, str(run_dir)))
    report = EvalReport.from_runs(config, results)
    report.write(out)
    return report


def sensitivity_sweep(
    config: TrainConfig,
    n_values: list[int],
    runs: int | None = None,
    out_dir: str | Path | None = None,
    split: OneClassSplit | None = None,
) -> dict[int, EvalReport]:
    if not n_values:
        raise ValueError("n_values must be non-empty")
    out = Path(out_dir if out_dir is not None else config.out)
    if split is None:
        split = load_split(config)
    table = {n: run_benchmark(config.replace(n_mem=n), runs, out / f"n_{n}", split) for n in n_values}
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n_mem", "mean_auroc", "std_auroc", "runs"])
        for n, rep in table.items():
            w.writerow([n, repr(rep.mean), repr(rep.std), len(rep.aurocs)])
    return table


def ablation_run(
    config: TrainConfig,
    disable: set[str] | list[str] | tuple[str, ...],
    runs: int | None = None,
    out_dir: str | Path | None = None,
    split: OneClassSplit | None = None,
) -> EvalReport:
    """Benchmark with the named auxiliary losses switched off (hull stats included)."""
    names = tuple(sorted(s.removeprefix("l_") for s in disable))
    bad = [s for s in names if s not in AUX_LOSSES]
    if bad:
        raise ValueError(f"cannot disable {bad}; only {AUX_LOSSES} are optional (adversarial term is not)")
    return run_benchmark(config.replace(disable_loss=names), runs, out_dir, split)
