"""``memgan`` command line.

Subcommands::

    train          train one model
    eval           score a checkpoint on its test split
    bench          multi-seed benchmark for one normal class
    sweep-n        benchmark over several memory sizes
    ablate         baseline vs. runs with auxiliary losses switched off
    geometry       2-D polytope vertex-recovery experiment
    decode-memory  render G(m_i) for every memory unit
    viz-latent     2-D embedding of memory units and encoded test codes

Training flags mirror the config-file keys (see ``memgan.config``).
Precedence is command line > ``--config`` file > built-in defaults; every
command writes ``manifest.json`` recording the resolved values and where each
came from. Exit status: 0 ok, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import difflib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .config import ConfigError, TrainConfig, coerce_values, read_config_file, write_config_file

log = logging.getLogger("memgan")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
CONFIG_KEYS = [f.name for f in fields(TrainConfig)]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config: dict
    sources: dict[str, str]
    cli_values: dict = field(default_factory=dict)
    file_values: dict = field(default_factory=dict)
    config_file: str | None = None
    started: str = ""
    finished: str = ""
    status: str = "running"
    outputs: list[str] = field(default_factory=list)

    def write(self, out_dir: str | Path) -> Path:
        path = Path(out_dir) / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, default=str) + "\n")
        return path


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


# ---------------------------------------------------------------------------
# parser


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration (mirrors config-file keys)")
    for name in CONFIG_KEYS:
        g.add_argument("--" + name.replace("_", "-"), dest=name, default=argparse.SUPPRESS, metavar="VALUE")
    g.add_argument("--config", default=None, help="key=value config file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="memgan", description="Memory-augmented bidirectional GAN for one-class anomaly detection")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("train", help="train one model")
    _add_config_flags(p)
    p.add_argument("--resume", default=None, help="continue from a checkpoint")

    p = sub.add_parser("eval", help="score a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--eps-hull", type=float, default=None)
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("bench", help="multi-seed benchmark")
    _add_config_flags(p)

    p = sub.add_parser("sweep-n", help="sensitivity to the number of memory units")
    _add_config_flags(p)
    p.add_argument("--n-values", default="25,50,100,200", help="comma list of memory sizes")

    p = sub.add_parser("ablate", help="baseline vs. disabled auxiliary losses")
    _add_config_flags(p)

    p = sub.add_parser("geometry", help="2-D polytope vertex recovery")
    p.add_argument("--points", default="uniform-square", help="uniform-square | triangle | path to an .npy/.csv (N,2) array")
    p.add_argument("--count", type=int, default=500, help="points drawn for uniform-square")
    p.add_argument("--n", type=int, default=4, help="memory units")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iterations", type=int, default=300)
    p.add_argument("--mc-samples", type=int, default=2048)
    p.add_argument("--penalty", type=float, default=None)
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--out", default="runs/geometry")

    p = sub.add_parser("decode-memory", help="decode every memory unit to an image grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--nrow", type=int, default=10)
    p.add_argument("--out", default=None)

    p = sub.add_parser("viz-latent", help="2-D embedding of memory units and test codes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--method", choices=("pca", "tsne"), default="pca")
    p.add_argument("--max-points", type=int, default=2000)
    p.add_argument("--eps-hull", type=float, default=None)
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    return parser


def _known_flags(parser: argparse.ArgumentParser, command: str | None) -> list[str]:
    target = parser
    if command:
        for action in parser._subparsers._group_actions:  # noqa: SLF001
            target = action.choices.get(command, parser)
    return [o for a in target._actions for o in a.option_strings if o.startswith("--")]  # noqa: SLF001


def parse(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    ns, extra = parser.parse_known_args(argv)
    if ns.command is None:
        raise UsageError("memgan: missing COMMAND (train, eval, bench, sweep-n, ablate, geometry, "
                         "decode-memory, viz-latent)")
    if extra:
        known = _known_flags(parser, ns.command)
        msgs = []
        for arg in extra:
            flag = arg.split("=", 1)[0]
            hint = difflib.get_close_matches(flag, known, n=3, cutoff=0.6)
            msgs.append(f"  {flag}" + (f"  (did you mean {', '.join(hint)}?)" if hint else ""))
        raise UsageError(f"memgan {ns.command}: unrecognized arguments:\n" + "\n".join(msgs))
    return ns


def resolve_config(ns: argparse.Namespace) -> tuple[TrainConfig, RunManifest]:
    """Merge defaults < config file < command line and record the provenance."""
    cli_raw = {k: getattr(ns, k) for k in CONFIG_KEYS if hasattr(ns, k)}
    file_values = read_config_file(ns.config) if ns.config else {}
    merged = {**file_values, **coerce_values(cli_raw)}
    cfg = TrainConfig(**merged)
    sources = {k: "cli" if k in cli_raw else "file" if k in file_values else "default" for k in CONFIG_KEYS}
    manifest = RunManifest(
        command=ns.command,
        argv=list(sys.argv[1:]) if ns.argv is None else list(ns.argv),
        config=cfg.to_dict(),
        sources=sources,
        cli_values=cli_raw,
        file_values={k: list(v) if isinstance(v, tuple) else v for k, v in file_values.items()},
        config_file=str(ns.config) if ns.config else None,
        started=_now(),
    )
    return cfg, manifest


def _plain_manifest(ns: argparse.Namespace, values: dict) -> RunManifest:
    return RunManifest(command=ns.command, argv=list(ns.argv or []), config=values,
                       sources={k: "cli" for k in values}, started=_now())


def _finish(manifest: RunManifest, out: Path) -> None:
    manifest.finished = _now()
    manifest.status = "ok"
    manifest.outputs = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()
                              and p.name != "manifest.json")
    manifest.write(out)


# ---------------------------------------------------------------------------
# commands


def cmd_train(ns) -> int:
    from .trainer import train

    cfg, manifest = resolve_config(ns)
    out = Path(cfg.out)
    manifest.write(out)
    write_config_file(cfg, out / "config.txt")
    trainer = train(cfg, out, resume=ns.resume)
    last = trainer.history[-1] if trainer.history else None
    if last is not None:
        print(f"trained {trainer.epoch} epochs; final l_cyc={last.l_cyc:.4f}")
    print(f"outputs in {out}")
    _finish(manifest, out)
    return EXIT_OK


def cmd_eval(ns) -> int:
    from .evaluator import EvalReport, RunResult, evaluate
    from .trainer import load_split, load_trainer

    trainer = load_trainer(ns.checkpoint)
    cfg = trainer.config
    if ns.cache_dir:
        cfg = cfg.replace(cache_dir=ns.cache_dir)
    eps = ns.eps_hull if ns.eps_hull is not None else cfg.eps_hull
    out = Path(ns.out) if ns.out else Path(ns.checkpoint).parent / "eval"
    manifest = _plain_manifest(ns, {"checkpoint": ns.checkpoint, "eps_hull": eps, "train_config": cfg.to_dict()})
    manifest.write(out)
    split = load_split(cfg)
    a, stats, _ = evaluate(trainer.state, split, eps)
    report = EvalReport.from_runs(cfg, [RunResult(cfg.seed, a, stats, str(Path(ns.checkpoint).parent))])
    report.write(out)
    print(f"AUROC {a:.4f}  hull containment normal {stats.normal_fraction:.3f} abnormal {stats.abnormal_fraction:.3f}")
    _finish(manifest, out)
    return EXIT_OK


def _print_report(report) -> None:
    runs = " ".join(f"{a:.4f}" for a in report.aurocs)
    print(f"{report.dataset} class {report.normal_class}: AUROC {report.mean:.4f} +- {report.std:.4f} "
          f"over {len(report.aurocs)} runs [{runs}]")


def cmd_bench(ns) -> int:
    from .evaluator import run_benchmark

    cfg, manifest = resolve_config(ns)
    out = Path(cfg.out)
    manifest.write(out)
    report = run_benchmark(cfg, cfg.runs, out)
    _print_report(report)
    _finish(manifest, out)
    return EXIT_OK


def cmd_sweep(ns) -> int:
    from .evaluator import sensitivity_sweep

    try:
        n_values = [int(v) for v in ns.n_values.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--n-values must be a comma list of integers, got {ns.n_values!r}") from None
    if not n_values or min(n_values) < 1:
        raise UsageError("--n-values must list positive integers")
    cfg, manifest = resolve_config(ns)
    manifest.config["n_values"] = n_values
    out = Path(cfg.out)
    manifest.write(out)
    table = sensitivity_sweep(cfg, n_values, cfg.runs, out)
    for n, rep in table.items():
        print(f"n={n:4d}  AUROC {rep.mean:.4f} +- {rep.std:.4f}")
    means = [r.mean for r in table.values()]
    print(f"spread {max(means) - min(means):.4f}")
    _finish(manifest, out)
    return EXIT_OK


def cmd_ablate(ns) -> int:
    from .evaluator import ablation_run, run_benchmark

    cfg, manifest = resolve_config(ns)
    disabled = cfg.disable_loss or ("proj",)
    base_cfg = cfg.replace(disable_loss=())
    out = Path(cfg.out)
    manifest.config["ablated"] = list(disabled)
    manifest.write(out)
    base = run_benchmark(base_cfg, cfg.runs, out / "baseline")
    abl = ablation_run(base_cfg, disabled, cfg.runs, out / ("no_" + "_".join(disabled)))
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "auroc_base", "auroc_ablated", "normal_frac_base", "normal_frac_ablated"])
        for b, a in zip(base.runs, abl.runs):
            w.writerow([b.seed, repr(b.auroc), repr(a.auroc), repr(b.hull.normal_fraction), repr(a.hull.normal_fraction)])
            print(f"seed {b.seed}: AUROC {b.auroc:.4f} -> {a.auroc:.4f}   "
                  f"normal containment {b.hull.normal_fraction:.3f} -> {a.hull.normal_fraction:.3f}")
    _finish(manifest, out)
    return EXIT_OK


TRIANGLE = np.array([[0.0, 0.0], [1.0, 0.0], [0.3, 0.8]])


def _load_points(spec: str, count: int, seed: int) -> np.ndarray:
    from .geometry import uniform_square

    if spec == "uniform-square":
        return uniform_square(count, seed)
    if spec == "triangle":
        return TRIANGLE.copy()
    path = Path(spec)
    if not path.exists():
        raise UsageError(f"--points: expected uniform-square, triangle or an existing file, got {spec!r}")
    pts = np.load(path) if path.suffix == ".npy" else np.loadtxt(path, delimiter=",", ndmin=2)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise UsageError(f"--points file must hold an (N, 2) array, got shape {pts.shape}")
    return pts


def cmd_geometry(ns) -> int:
    from .geometry import PolytopeProblem, optimize_polytope, plot_polytope

    if ns.n < 1 or ns.iterations < 0 or ns.mc_samples < 1 or ns.count < 3:
        raise UsageError("--n, --mc-samples must be >= 1, --count >= 3, --iterations >= 0")
    points = _load_points(ns.points, ns.count, ns.seed)
    out = Path(ns.out)
    values = {k: getattr(ns, k) for k in ("points", "count", "n", "seed", "iterations", "mc_samples", "penalty", "step")}
    manifest = _plain_manifest(ns, values)
    manifest.write(out)
    problem = PolytopeProblem(points, ns.n, mc_samples=ns.mc_samples, penalty=ns.penalty,
                              iterations=ns.iterations, step=ns.step, seed=ns.seed)
    res = optimize_polytope(problem)
    plot_polytope(res, points, out / "polytope.png")

    hv = res.hull_vertices
    with open(out / "vertices.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["unit", "x", "y", "nearest_hull_vertex_x", "nearest_hull_vertex_y", "distance"])
        print("unit        x         y    nearest hull vertex   distance")
        for i, m in enumerate(res.memory):
            d = np.linalg.norm(hv - m, axis=1)
            j = int(d.argmin())
            w.writerow([i, repr(float(m[0])), repr(float(m[1])), repr(float(hv[j, 0])), repr(float(hv[j, 1])), repr(float(d[j]))])
            print(f"{i:4d} {m[0]:9.4f} {m[1]:9.4f}   ({hv[j, 0]:7.4f}, {hv[j, 1]:7.4f})   {d[j]:.4f}")
    with open(out / "objective.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective"])
        w.writerows([i, repr(v)] for i, v in enumerate(res.objective))
    summary = {"coverage_term": res.coverage_term, "fit_term": res.fit_term,
               "initial_objective": res.initial_objective, "final_objective": res.objective[-1],
               "steps": len(res.objective) - 1}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"coverage term {res.coverage_term:.3e}  fit term {res.fit_term:.3e}  "
          f"objective {res.objective[0]:.4g} -> {res.objective[-1]:.4g} in {len(res.objective) - 1} steps")
    _finish(manifest, out)
    return EXIT_OK


def cmd_decode(ns) -> int:
    from .geometry import decode_memory_grid
    from .trainer import load_checkpoint

    out = Path(ns.out) if ns.out else Path(ns.checkpoint).parent
    manifest = _plain_manifest(ns, {"checkpoint": ns.checkpoint, "nrow": ns.nrow})
    manifest.write(out)
    state = load_checkpoint(ns.checkpoint)
    decode_memory_grid(state, out / "memory_grid.png", nrow=ns.nrow)
    print(f"decoded {state.n_mem} memory units -> {out / 'memory_grid.png'}")
    _finish(manifest, out)
    return EXIT_OK


def cmd_viz(ns) -> int:
    from .evaluator import score_split
    from .geometry import embed_2d, hull_report
    from .trainer import load_split, load_trainer

    trainer = load_trainer(ns.checkpoint)
    cfg = trainer.config.replace(cache_dir=ns.cache_dir) if ns.cache_dir else trainer.config
    eps = ns.eps_hull if ns.eps_hull is not None else cfg.eps_hull
    out = Path(ns.out) if ns.out else Path(ns.checkpoint).parent
    manifest = _plain_manifest(ns, {"checkpoint": ns.checkpoint, "method": ns.method,
                                    "max_points": ns.max_points, "eps_hull": eps, "seed": ns.seed})
    manifest.write(out)
    split = load_split(cfg)
    state = trainer.state
    scored = score_split(state, split)
    rng = np.random.default_rng(ns.seed)
    pick = rng.choice(len(scored.codes), min(ns.max_points, len(scored.codes)), replace=False)
    M = state.memory.detach().double().numpy()
    codes = np.concatenate([M, scored.codes[pick]])
    labels = ["memory"] * len(M) + ["abnormal" if f else "normal" for f in scored.flags[pick]]
    embed_2d(codes, labels, method=ns.method, path=out / f"latent_{ns.method}.png", seed=ns.seed)
    report = hull_report(state, split, eps)
    (out / "hull_report.txt").write_text(report.to_text())
    print(report.to_text(), end="")
    _finish(manifest, out)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "sweep-n": cmd_sweep,
    "ablate": cmd_ablate,
    "geometry": cmd_geometry,
    "decode-memory": cmd_decode,
    "viz-latent": cmd_viz,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        ns = parse(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    ns.argv = argv
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    if os.environ.get("MEMGAN_DATA_DIR"):
        log.debug("dataset cache: %s", os.environ["MEMGAN_DATA_DIR"])

    from .data import DatasetError
    from .objectives import NonFiniteLossError
    from .trainer import CheckpointError

    try:
        return COMMANDS[ns.command](ns)
    except (UsageError, ConfigError) as exc:
        print(f"memgan {ns.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, CheckpointError, NonFiniteLossError, OSError, RuntimeError, ValueError) as exc:
        print(f"memgan {ns.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
