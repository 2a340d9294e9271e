"""External memory: attention addressing, convex sampling and hull geometry.

The trainable memory is an ``n x d`` matrix whose rows are memory units.
``attend``/``project``/``sample_convex`` are differentiable torch ops used
in training. ``hull_distance`` and friends are float64 numpy diagnostics
that measure how far latent codes sit from the convex hull of the units;
they are never part of the training graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

INIT_STD = 0.1


def init_memory(n: int, d: int, seed: int, dtype: torch.dtype = torch.float32,
                init_std: float = INIT_STD) -> torch.Tensor:
    if n < 1 or d < 1:
        raise ValueError(f"memory shape must be positive, got n={n}, d={d}")
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(n, d, generator=gen, dtype=torch.float64).mul_(init_std).to(dtype)


def _check(M: torch.Tensor, z: torch.Tensor) -> None:
    if M.dim() != 2:
        raise ValueError(f"memory must be 2-D, got shape {tuple(M.shape)}")
    if z.shape[-1] != M.shape[1]:
        raise ValueError(f"latent width {z.shape[-1]} does not match memory width {M.shape[1]}")
    if not (torch.isfinite(z).all() and torch.isfinite(M).all()):
        raise ValueError("non-finite values in memory or latent code")


def attend(M: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    """Attention weights ``softmax(M z)`` for a code ``(d,)`` or a batch ``(B, d)``."""
    _check(M, z)
    logits = z @ M.T
    logits = logits - logits.amax(dim=-1, keepdim=True).detach()
    w = logits.exp()
    return w / w.sum(dim=-1, keepdim=True)


def project(M: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    """Attention readout ``M^T softmax(M z)``; always inside the hull of the rows."""
    return attend(M, z) @ M


def sample_convex(
    M: torch.Tensor, count: int, generator: torch.Generator | int | None = None
) -> tuple[torch.Tensor, torch.Tensor]:
    """Draw ``count`` random convex combinations of memory units.

    Weights are ``softmax(g)`` with ``g ~ N(0, I_n)``. Returns ``(z, alpha)``;
    ``z`` stays attached to ``M``'s graph.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if isinstance(generator, int):
        generator = torch.Generator().manual_seed(generator)
    g = torch.randn(count, M.shape[0], generator=generator, dtype=M.dtype)
    alpha = torch.softmax(g, dim=-1)
    return alpha @ M, alpha


# ---------------------------------------------------------------------------
# hull geometry (numpy, float64)


@dataclass
class HullSolution:
    distance: float
    alpha_star: np.ndarray
    converged: bool


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row of ``v`` onto the probability simplex."""
    v = np.atleast_2d(v)
    n = v.shape[1]
    u = -np.sort(-v, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    ind = np.arange(1, n + 1)
    cond = u - css / ind > 0
    rho = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(len(v)), rho] / (rho + 1)
    return np.maximum(v - theta[:, None], 0.0)


def _polish(M: np.ndarray, z: np.ndarray, alpha: np.ndarray, dist: float) -> tuple[np.ndarray, float]:
    # smallest correction of alpha, within the affine hull of its support,
    # that solves the least-squares problem there exactly; accepted only if it
    # stays on the simplex and does not increase the distance
    support = np.flatnonzero(alpha > 1e-12)
    if len(support) < 2:
        return alpha, dist
    ref, rest = support[0], support[1:]
    A = (M[rest] - M[ref]).T
    resid = z - alpha @ M
    delta, *_ = np.linalg.lstsq(A, resid, rcond=None)
    cand = alpha.copy()
    cand[rest] += delta
    cand[ref] -= delta.sum()
    if (cand < 0).any():
        return alpha, dist
    d = float(np.linalg.norm(cand @ M - z))
    return (cand, d) if d <= dist else (alpha, dist)


def hull_distances(
    M, Z, tol: float = 1e-6, max_iter: int = 500, polish: bool = True
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distances from each row of ``Z`` to the convex hull of the rows of ``M``.

    Solves ``min_{alpha in simplex} ||M^T alpha - z||`` for every code at once
    with accelerated projected gradient (step ``1/L``, function-value
    restart). A code counts as converged once the distance changes by less
    than ``tol`` between iterations. Returns ``(distances, alphas, converged)``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    M = np.asarray(M.detach().cpu() if torch.is_tensor(M) else M, dtype=np.float64)
    Z = np.asarray(Z.detach().cpu() if torch.is_tensor(Z) else Z, dtype=np.float64)
    Z = np.atleast_2d(Z)
    if Z.shape[1] != M.shape[1]:
        raise ValueError(f"code width {Z.shape[1]} does not match memory width {M.shape[1]}")
    B, n = len(Z), len(M)

    lip = max(np.linalg.norm(M, 2) ** 2, 1e-12)
    alpha = np.full((B, n), 1.0 / n)
    y = alpha.copy()
    t = np.ones(B)
    dist = np.linalg.norm(alpha @ M - Z, axis=1)
    converged = np.zeros(B, dtype=bool)
    active = np.ones(B, dtype=bool)
    plain = np.ones(B, dtype=bool)  # y == alpha: the last step carried no momentum

    for _ in range(max_iter):
        if not active.any():
            break
        a = np.flatnonzero(active)
        grad = (y[a] @ M - Z[a]) @ M.T
        new = project_simplex(y[a] - grad / lip)
        new_dist = np.linalg.norm(new @ M - Z[a], axis=1)

        worse = new_dist > dist[a]
        small = np.abs(dist[a] - new_dist) < tol
        # a stalled momentum step says nothing about optimality; restart instead
        done = small & plain[a]
        restart = worse | small
        keep = ~worse
        prev = alpha[a].copy()
        alpha[a[keep]] = new[keep]
        dist[a[keep]] = new_dist[keep]

        t_new = np.where(restart, 1.0, (1 + np.sqrt(1 + 4 * t[a] ** 2)) / 2)
        mom = np.where(restart, 0.0, (t[a] - 1) / t_new)
        y[a] = np.where(restart[:, None], alpha[a], new + mom[:, None] * (new - prev))
        t[a] = t_new
        plain[a] = restart | (mom == 0)
        converged[a[done]] = True
        active[a[done]] = False

    if polish:
        for i in range(B):
            alpha[i], dist[i] = _polish(M, Z[i], alpha[i], dist[i])
    return dist, alpha, converged


def hull_distance(M, z, tol: float = 1e-6, max_iter: int = 500) -> HullSolution:
    z = np.asarray(z.detach().cpu() if torch.is_tensor(z) else z, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError("hull_distance takes a single code; use hull_distances for batches")
    dist, alpha, conv = hull_distances(M, z[None], tol=tol, max_iter=max_iter)
    return HullSolution(distance=float(dist[0]), alpha_star=alpha[0], converged=bool(conv[0]))


def hull_containment_fraction(M, codes, eps: float, **solver) -> float:
    if eps <= 0:
        raise ValueError("eps must be positive")
    codes = np.atleast_2d(np.asarray(codes.detach().cpu() if torch.is_tensor(codes) else codes))
    if codes.size == 0:
        raise ValueError("empty code set")
    dist, _, _ = hull_distances(M, codes, **solver)
    return float(np.mean(dist <= eps))


def latent_scale(M) -> float:
    """RMS distance of memory units from their centroid; the unit for hull eps."""
    M = np.asarray(M.detach().cpu() if torch.is_tensor(M) else M, dtype=np.float64)
    return float(np.sqrt(np.mean(np.sum((M - M.mean(0)) ** 2, axis=1))))
