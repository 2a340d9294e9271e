"""Latent-geometry experiments: polytope vertex recovery, hull reports, plots.

``optimize_polytope`` places ``n`` points in the plane so that (a) random
convex combinations of them stay inside the convex hull ``S`` of a data
cloud, and (b) every data point is covered by their hull. Its minimizers are
the vertices of ``S`` when ``n`` is at least the vertex count. The
non-differentiable indicator of (a) is replaced by the hinge distance to
``S``; the inner minimum of (b) is solved exactly and differentiated with the
optimal weights held fixed (envelope rule).
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402
from scipy.spatial import ConvexHull, QhullError  # noqa: E402

from .data import OneClassSplit  # noqa: E402
from .evaluator import hull_stats, score_split  # noqa: E402
from .memory import hull_distances  # noqa: E402
from .networks import MemGAN  # noqa: E402

log = logging.getLogger(__name__)


class DegeneratePointsError(ValueError):
    pass


@dataclass
class PolytopeProblem:
    points: np.ndarray
    n: int
    mc_samples: int = 2048
    penalty: float | None = None  # weight of the coverage term; None -> number of points
    iterations: int = 2000
    step: float = 0.05
    seed: int = 0
    smoothing: float = 1e-3  # pseudo-Huber width for the optimized surrogate


@dataclass
class PolytopeResult:
    memory: np.ndarray
    hull_vertices: np.ndarray
    objective: list[float] = field(default_factory=list)
    coverage_term: float = 0.0  # sampled combinations outside S (hinge distance, MC mean)
    fit_term: float = 0.0  # sum_j hull distance of data point j
    initial_objective: float = 0.0


class Polygon:
    """Convex polygon with a differentiable point-to-polygon distance."""

    def __init__(self, points: np.ndarray):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 2:
            raise ValueError("exact polygon geometry needs 2-D points")
        try:
            hull = ConvexHull(points)
        except (QhullError, ValueError) as exc:
            raise DegeneratePointsError(f"point set is degenerate (collinear or too few points): {exc}") from None
        self.vertices = points[hull.vertices]  # counter-clockwise
        self._a = torch.from_numpy(self.vertices)
        self._b = torch.roll(self._a, -1, dims=0)
        self._eq = torch.from_numpy(hull.equations)  # outward normals: n.x + c <= 0 inside

    def distance(self, q: torch.Tensor) -> torch.Tensor:
        """Distance from each row of ``q`` to the polygon (0 inside)."""
        outside = ((q @ self._eq[:, :2].T + self._eq[:, 2]) > 1e-12).any(dim=1)
        ab = self._b - self._a
        t = ((q[:, None, :] - self._a) * ab).sum(-1) / (ab * ab).sum(-1)
        closest = self._a + t.clamp(0, 1)[..., None] * ab
        d = ((q[:, None, :] - closest) ** 2).sum(-1).add(1e-30).sqrt().amin(dim=1)
        return torch.where(outside, d, torch.zeros_like(d))


def _softmax_samples(count: int, n: int, seed: int) -> torch.Tensor:
    """``count`` softmax-of-Gaussian draws plus the ``n`` simplex corners.

    Softmax draws never reach the corners, so without them any memory slightly
    outside the vertices would already score zero.
    """
    g = torch.Generator().manual_seed(seed)
    draws = torch.softmax(torch.randn(count, n, generator=g, dtype=torch.float64), dim=1)
    return torch.cat([draws, torch.eye(n, dtype=torch.float64)])


def _soft(d: torch.Tensor, delta: float) -> torch.Tensor:
    # pseudo-Huber: ~d for d >> delta, smooth at 0
    return (d * d + delta * delta).sqrt() - delta if delta > 0 else d


def polytope_terms(M: torch.Tensor, polygon: Polygon, points: np.ndarray, alphas: torch.Tensor,
                   smoothing: float = 0.0):
    """Return ``(coverage_term, fit_term)`` with gradients w.r.t. ``M``.

    With ``smoothing=0`` these are the exact hinge / distance terms.
    """
    coverage = _soft(polygon.distance(alphas @ M), smoothing).mean()
    _, a_star, _ = hull_distances(M.detach().numpy(), points)
    a_star = torch.from_numpy(a_star)
    resid = (a_star @ M - torch.from_numpy(points)).pow(2).sum(1).add(1e-30).sqrt()
    return coverage, _soft(resid, smoothing).sum()


def optimize_polytope(problem: PolytopeProblem) -> PolytopeResult:
    """Gradient descent with backtracking on the polytope objective (2-D only)."""
    points = np.asarray(problem.points, dtype=np.float64)
    if len(points) == 0:
        raise ValueError("points must be non-empty")
    if points.shape[1] != 2:
        raise ValueError("optimize_polytope supports d=2 only")
    polygon = Polygon(points)
    alphas = _softmax_samples(problem.mc_samples, problem.n, problem.seed)

    # start on a small ring around the centroid (seeded phase); independent of point order
    rng = np.random.default_rng(problem.seed)
    centre = points.mean(0)
    spread = points.std(0).mean()
    angle = rng.uniform(0, 2 * np.pi) + 2 * np.pi * np.arange(problem.n) / problem.n
    ring = np.stack([np.cos(angle), np.sin(angle)], axis=1)
    M = torch.from_numpy(centre + 0.1 * spread * ring).requires_grad_(True)
    penalty = float(len(points)) if problem.penalty is None else problem.penalty

    def objective(M):
        cov, fit = polytope_terms(M, polygon, points, alphas, problem.smoothing)
        return penalty * cov + fit

    obj = objective(M)
    history = [float(obj.detach())]
    step = problem.step
    for it in range(problem.iterations):
        (grad,) = torch.autograd.grad(obj, M)
        g2 = float((grad * grad).sum())
        if g2 < 1e-24:
            break
        # Armijo backtracking; accepted steps never increase the objective
        for _ in range(40):
            cand = (M.detach() - step * grad).requires_grad_(True)
            c_obj = objective(cand)
            if float(c_obj.detach()) <= history[-1] - 1e-4 * step * g2:
                M, obj = cand, c_obj
                step *= 2.0
                break
            step *= 0.5
        else:
            log.info("polytope: line search stalled at iteration %d", it)
            break
        history.append(float(obj.detach()))

    with torch.no_grad():
        cov, fit = polytope_terms(M.detach(), polygon, points, alphas)
    return PolytopeResult(
        memory=M.detach().numpy().copy(),
        hull_vertices=polygon.vertices,
        objective=history,
        coverage_term=float(cov),
        fit_term=float(fit),
        initial_objective=history[0],
    )


def match_vertices(memory: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Distance from each target to its assigned memory unit (optimal one-to-one matching)."""
    from scipy.optimize import linear_sum_assignment

    cost = np.linalg.norm(targets[:, None, :] - memory[None, :, :], axis=-1)
    rows, cols = linear_sum_assignment(cost)
    return cost[rows, cols]


def uniform_square(count: int = 500, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).uniform(-1, 1, size=(count, 2))


def plot_polytope(result: PolytopeResult, points: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(points[:, 0], points[:, 1], s=6, c="tab:orange", label="data")
    v = np.vstack([result.hull_vertices, result.hull_vertices[:1]])
    ax.plot(v[:, 0], v[:, 1], c="tab:orange", lw=0.8, alpha=0.6)
    try:
        mh = result.memory[ConvexHull(result.memory).vertices]
        mh = np.vstack([mh, mh[:1]])
        ax.plot(mh[:, 0], mh[:, 1], c="tab:red", lw=1)
    except QhullError:
        pass
    ax.scatter(result.memory[:, 0], result.memory[:, 1], s=40, c="tab:red", label="memory units")
    ax.set_aspect("equal")
    ax.legend(loc="upper right")
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


# ---------------------------------------------------------------------------
# trained-model diagnostics


@dataclass
class HullReport:
    eps: float
    scale: float
    normal_fraction: float
    abnormal_fraction: float
    normal_median_distance: float
    abnormal_median_distance: float
    memory_to_data_hull: list[float]

    def to_text(self) -> str:
        lines = [f"{k}: {v}" for k, v in asdict(self).items() if k != "memory_to_data_hull"]
        lines.append("memory_to_data_hull: " + " ".join(f"{d:.6g}" for d in self.memory_to_data_hull))
        return "\n".join(lines) + "\n"


def hull_report(state: MemGAN, split: OneClassSplit, eps: float = 1e-2, max_hull_points: int = 2000,
                seed: int = 0) -> HullReport:
    """Containment of encoded test codes in the memory hull, plus each unit's
    distance to the hull of the encoded normal codes.

    ``eps`` is relative to the RMS radius of the memory units.
    """
    scored = score_split(state, split)
    M = state.memory.detach().double().numpy()
    stats = hull_stats(M, scored.codes, scored.flags, eps)

    normal_codes = scored.codes[scored.flags == 0]
    if len(normal_codes) > max_hull_points:
        pick = np.random.default_rng(seed).choice(len(normal_codes), max_hull_points, replace=False)
        normal_codes = normal_codes[pick]
    unit_dist, _, _ = hull_distances(normal_codes, M)
    return HullReport(**asdict(stats), memory_to_data_hull=[float(d) for d in unit_dist])


def embed_2d(codes: np.ndarray, labels=None, method: str = "pca", path: str | Path | None = None,
             seed: int = 0) -> np.ndarray:
    """Project codes to 2-D (``identity`` | ``pca`` | ``tsne``) and optionally plot them.

    ``labels`` are per-row tags; ``memory``/``normal``/``abnormal`` get the
    usual red/orange/blue colouring.
    """
    codes = np.asarray(codes, dtype=np.float64)
    if len(codes) < 3:
        raise ValueError("need at least 3 codes to embed")
    if method == "identity":
        if codes.shape[1] != 2:
            raise ValueError("identity embedding needs 2-D codes")
        coords = codes.copy()
    elif method == "pca":
        centred = codes - codes.mean(0)
        _, _, vt = np.linalg.svd(centred, full_matrices=False)
        vt = vt[:2] * np.sign(vt[:2, :1] + 1e-300)  # fix the sign for reproducible plots
        coords = centred @ vt.T
    elif method == "tsne":
        try:
            from sklearn.manifold import TSNE
        except ImportError as exc:
            raise RuntimeError("t-SNE needs scikit-learn (pip install scikit-learn)") from exc
        perplexity = min(30.0, (len(codes) - 1) / 3)
        coords = TSNE(n_components=2, perplexity=perplexity, random_state=seed, init="pca").fit_transform(codes)
    else:
        raise ValueError(f"unknown embedding method {method!r}")

    if path is not None:
        labels = np.asarray(labels if labels is not None else ["normal"] * len(codes))
        colours = {"memory": "tab:red", "normal": "tab:orange", "abnormal": "tab:blue"}
        fig, ax = plt.subplots(figsize=(6, 6))
        order = [t for t in ("abnormal", "normal", "memory") if t in set(labels)]
        order += sorted(set(labels) - set(order))
        for tag in order:
            sel = labels == tag
            ax.scatter(coords[sel, 0], coords[sel, 1], s=40 if tag == "memory" else 5,
                       c=colours.get(tag), label=tag, alpha=1.0 if tag == "memory" else 0.6)
        ax.legend(loc="best")
        ax.set_title(f"latent codes ({method})")
        fig.tight_layout()
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, dpi=120)
        plt.close(fig)
    return coords


def decode_memory_grid(state: MemGAN, path: str | Path, nrow: int = 10) -> np.ndarray:
    """Generate an image from every memory unit and save them as one grid PNG.

    Returns the uint8 grid array that was written.
    """
    from PIL import Image
    from torchvision.utils import make_grid

    state.eval()
    with torch.no_grad():
        images = state.generator(state.memory.detach())
    tiles = ((images.float() + 1) / 2).clamp(0, 1)
    grid = make_grid(tiles, nrow=nrow, padding=2, pad_value=1.0)
    arr = (grid.permute(1, 2, 0).numpy() * 255).round().astype(np.uint8)
    if images.shape[1] == 1:
        arr = arr[:, :, 0]  # make_grid replicates single channels
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)
    return arr
