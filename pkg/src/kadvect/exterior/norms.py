"""Quadrature-based pairings, norms and weak-derivative diagnostics."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .algebra import inner_values
from .fields import DimensionError, KFormField, QuadratureGrid, TestForm, VectorField


def _values(F, grid_nodes: np.ndarray, t: float) -> np.ndarray:
    return F(grid_nodes, t) if callable(F) else np.asarray(F)


def l2_pairing(F: KFormField, K: KFormField, grid: QuadratureGrid, t: float = 0.0) -> float:
    """``<<F, K>> = int <F, K>_x dx`` by the grid's quadrature rule."""
    if isinstance(F, KFormField) and isinstance(K, KFormField) and (F.n != K.n or F.k != K.k):
        raise DimensionError("pairing needs equal dimension and degree")
    vals = inner_values(_values(F, grid.nodes, t), _values(K, grid.nodes, t))
    return float(grid.weights @ vals)


def ball_mask(nodes: np.ndarray, center, radius: float | None) -> np.ndarray:
    if radius is None:
        return np.ones(nodes.shape[0], dtype=bool)
    c = np.zeros(nodes.shape[1]) if center is None else np.asarray(center, dtype=float)
    return np.sum((nodes - c) ** 2, axis=1) <= radius**2


def fiber_norm(values: np.ndarray) -> np.ndarray:
    """Pointwise norm: Euclidean over channels (Frobenius for matrix-valued data)."""
    v = np.asarray(values)
    return np.sqrt(np.sum(v.reshape(v.shape[0], -1) ** 2, axis=1))


def lp_norm(K, p: float, grid: QuadratureGrid, t: float = 0.0, *,
            radius: float | None = None, center=None) -> float:
    """``||K||_{L^p}`` on the grid box, or on the ball ``B(center, radius)`` if given.

    ``p = inf`` takes the maximum over (masked) nodes.
    """
    if not (p >= 1):
        raise ValueError(f"p must be >= 1 (got {p})")
    mask = ball_mask(grid.nodes, center, radius)
    vals = fiber_norm(_values(K, grid.nodes[mask], t))
    if np.isinf(p):
        return float(vals.max()) if vals.size else 0.0
    return float((grid.weights[mask] @ vals**p) ** (1.0 / p))


def w11_norm(b: VectorField, grid: QuadratureGrid, t: float = 0.0, *,
             radius: float | None = None, center=None) -> float:
    """``int |b| + |Db|`` with the Frobenius norm on ``Db``."""
    mask = ball_mask(grid.nodes, center, radius)
    pts = grid.nodes[mask]
    v, D = b.value_and_jacobian(pts, t)
    return float(grid.weights[mask] @ (fiber_norm(v) + fiber_norm(D)))


def holder_seminorm_estimate(K, alpha: float, probe_pairs, t: float = 0.0) -> float:
    """Max over probe pairs of ``|K(x) - K(y)| / |x - y|^alpha`` (a lower bound)."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    P = np.asarray(probe_pairs, dtype=float)
    if P.ndim != 3 or P.shape[1] != 2:
        raise ValueError("probe_pairs must have shape (m, 2, n)")
    x, y = P[:, 0], P[:, 1]
    dist = np.linalg.norm(x - y, axis=1)
    if np.any(dist == 0):
        raise ValueError("probe pairs contain coincident points")
    diff = fiber_norm(K(x, t) - K(y, t))
    return float(np.max(diff / dist**alpha))


def weak_derivative_check(K, S: Sequence, grid: QuadratureGrid,
                          test_forms: Sequence[TestForm], t: float = 0.0) -> float:
    """``max_{theta, i} |<<S_i, theta>> + <<K, d_i theta>>|``.

    ``S`` holds one candidate derivative per coordinate direction; each entry
    is a form (or any callable ``(x, t) -> channels``).
    """
    Kv = _values(K, grid.nodes, t)
    worst = 0.0
    for theta in test_forms:
        th = theta(grid.nodes, t)
        dth = theta.jacobian(grid.nodes, t)
        for i, Si in enumerate(S):
            r = grid.weights @ (inner_values(_values(Si, grid.nodes, t), th)
                                + inner_values(Kv, dth[..., i]))
            worst = max(worst, abs(float(r)))
    return worst


def refinement_estimate(quantity: Callable[[QuadratureGrid], float],
                        grid: QuadratureGrid) -> tuple[float, float]:
    """Value on the refined grid and ``|coarse - fine|`` as its error estimate."""
    coarse = quantity(grid)
    fine = quantity(grid.refine())
    return fine, abs(coarse - fine)
