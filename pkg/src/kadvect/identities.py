"""Randomized identity suite for the exterior calculus.

Pointwise identities are checked at random points against an absolute
tolerance (scaled by the size of the terms); quadrature identities against
three times the refinement estimate ``|Q_h - Q_{h/3}|`` plus a rounding floor.
Quadrature uses the midpoint rule on the test form's support box (spectrally
accurate for the compactly supported integrands); threefold refinement nests
the grids, so every field is evaluated once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exterior import (QuadratureGrid, contract, exterior_derivative, hodge_star,
                       lie_derivative, lie_derivative_adjoint, wedge)
from .exterior.algebra import hodge_values, inner_values, wedge_values
from .random_fields import random_form, random_test_form, random_vector_field

POINTWISE_TOL = 1e-8
ROUNDING_FLOOR = 1e-12
QUAD_POINTS = {1: 32, 2: 20, 3: 12}
REFINE = 3


@dataclass
class IdentityCheck:
    identity: str
    case: int
    n: int
    k: int
    residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual) and self.residual <= self.tolerance)

    def row(self) -> dict:
        return {"identity": self.identity, "case": self.case, "n": self.n, "k": self.k,
                "residual": self.residual, "tolerance": self.tolerance, "pass": self.passed}


def _pointwise(identity, case, n, k, lhs, rhs):
    lhs, rhs = np.asarray(lhs), np.asarray(rhs)
    scale = max(1.0, float(np.max(np.abs(lhs))), float(np.max(np.abs(rhs))))
    return IdentityCheck(identity, case, n, k, float(np.max(np.abs(lhs - rhs))),
                         POINTWISE_TOL * scale)


def _support_grid(theta, n):
    lo, hi = theta.box()
    return QuadratureGrid(lo, hi, QUAD_POINTS[n], rule="midpoint")


def _coarse_from_fine(values: np.ndarray, m: int, n: int, factor: int) -> np.ndarray:
    """Values at the nodes of an ``m``-point midpoint grid, taken from its ``factor``-fold
    refinement (odd ``factor``: coarse midpoints are fine midpoints)."""
    shaped = values.reshape((factor * m,) * n + values.shape[1:])
    sl = tuple(slice(factor // 2, None, factor) for _ in range(n))
    return shaped[sl].reshape((m**n,) + values.shape[1:])


def _quadrature(identity, case, n, k, coarse, fine, scale):
    tol = 3.0 * abs(coarse - fine) + ROUNDING_FLOOR * max(1.0, scale)
    return IdentityCheck(identity, case, n, k, abs(fine), tol)


# shapes span n = 1..4 and k = 0..3; cases cycle through them so that repeated
# shapes reuse compiled eager kernels (cold compilation dominates the run time)
SHAPES = ((1, 0), (2, 1), (2, 2), (3, 1), (3, 2), (4, 2), (4, 3))
# quadrature identities stay at n <= 3, where the refined grids resolve the test bump
QUAD_SHAPES = ((1, 0), (2, 1), (2, 2), (3, 1), (3, 2))


def _case_shape(case, dims, shapes=SHAPES):
    shapes = [s for s in shapes if s[0] in dims]
    return shapes[case % len(shapes)]


def calculus_identity_suite(seed: int = 0, n_cases: int = 20,
                            dims=(1, 2, 3, 4)) -> list[IdentityCheck]:
    """``n_cases`` randomized cases of each identity.

    Shapes ``(n, k)`` cycle through ``SHAPES`` for pointwise identities and
    ``QUAD_SHAPES`` for quadrature identities.

    * ``d_squared``: ``d d K = 0``
    * ``cartan``: ``L_b K = d i_b K + i_b d K``
    * ``hodge_double_star``: ``** a = (-1)^{k(n-k)} a``
    * ``adjointness``: ``<<L_b K, theta>> = <<K, L_b^T theta>>`` (quadrature)
    * ``adjoint_wedge``: ``int K ^ L_b(*theta) = -<<K, L_b^T theta>>`` (quadrature)
    * ``pairing_pointwise``: ``beta ^ *alpha = <beta, alpha> vol``
    * ``hodge_field``: the field-level star agrees with the channel kernel
    * ``pairing``: ``int beta ^ *alpha = <<beta, alpha>>`` (quadrature)
    """
    rng = np.random.default_rng(seed)
    out: list[IdentityCheck] = []
    for case in range(n_cases):
        n, k = _case_shape(case, dims)
        b = random_vector_field(rng, n)
        K = random_form(rng, n, k)
        # a fixed node set per shape keeps jax's eager op caches warm
        x = QuadratureGrid.cube(n, 1.5, QUAD_POINTS.get(n, 8) // 2).nodes
        out.append(_pointwise("d_squared", case, n, k,
                              exterior_derivative(exterior_derivative(K))(x), 0.0)
                   if k + 2 <= n else IdentityCheck("d_squared", case, n, k, 0.0, POINTWISE_TOL))
        cart = contract(b, exterior_derivative(K))(x) if k < n else 0.0
        if k > 0:
            cart = cart + exterior_derivative(contract(b, K))(x)
        out.append(_pointwise("cartan", case, n, k, lie_derivative(b, K)(x), cart))
        sign = (-1) ** (k * (n - k))
        Kx = K(x)
        out.append(_pointwise("hodge_double_star", case, n, k,
                              hodge_values(hodge_values(Kx, n, k), n, n - k), sign * Kx))
        Ax = random_form(rng, n, k)(x)
        out.append(_pointwise("pairing_pointwise", case, n, k,
                              wedge_values(Kx, hodge_values(Ax, n, k), n, k, n - k)[:, 0],
                              inner_values(Kx, Ax)))
        out.append(_pointwise("hodge_field", case, n, k, hodge_star(K)(x),
                              hodge_values(Kx, n, k)))

    for case in range(n_cases):
        n, k = _case_shape(case, dims, QUAD_SHAPES)
        b = random_vector_field(rng, n)
        K = random_form(rng, n, k)
        theta = random_test_form(rng, n, k, radius=1.0)
        grid = _support_grid(theta, n)
        fine = grid.refine(REFINE)
        X = fine.nodes
        vals = [F(X) for F in (K, theta, lie_derivative(b, K), lie_derivative_adjoint(b, theta),
                               lie_derivative(b, hodge_star(theta)))]

        def defects(v, w, n=n, k=k):
            Kv, tv, LKv, LTv, Lsv = v
            KLT = inner_values(Kv, LTv)
            return (float(w @ (inner_values(LKv, tv) - KLT)),
                    float(w @ (wedge_values(Kv, Lsv, n, k, n - k)[:, 0] + KLT)),
                    float(w @ (wedge_values(Kv, hodge_values(tv, n, k), n, k, n - k)[:, 0]
                               - inner_values(Kv, tv))))

        d_fine = defects(vals, fine.weights)
        d_coarse = defects([_coarse_from_fine(v, grid.points_per_axis, n, REFINE) for v in vals],
                           grid.weights)
        scale = float(np.max(np.abs(vals[0])) * np.max(np.abs(vals[3])) * grid.volume)
        for i, name in enumerate(("adjointness", "adjoint_wedge", "pairing")):
            out.append(_quadrature(name, case, n, k, d_coarse[i], d_fine[i], scale))
    return out


def wedge_top(K, S, X) -> np.ndarray:
    """Coefficient of ``K ^ S`` on ``dx^1 ^ ... ^ dx^n`` (``deg K + deg S = n``)."""
    return wedge(K, S)(X)[:, 0]


def summarize(checks: list[IdentityCheck]) -> dict[str, dict]:
    out: dict[str, dict] = {}
    for c in checks:
        s = out.setdefault(c.identity, {"cases": 0, "passed": 0, "max_residual": 0.0})
        s["cases"] += 1
        s["passed"] += int(c.passed)
        s["max_residual"] = max(s["max_residual"], c.residual)
    for s in out.values():
        s["pass"] = s["cases"] == s["passed"]
    return out
