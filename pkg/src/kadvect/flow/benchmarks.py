"""Integrator benchmarks with known answers.

* geometric Brownian motion ``dX = mu X dt + sigma X o dW``: exact solution
  ``X_t = x0 exp(mu t + sigma W_t)`` on the same driver;
* additive noise ``dX = c dW``: the scheme reproduces ``x0 + c W_t`` to
  rounding, and with a linear drift it matches the closed-form Heun recursion;
* round trip: ``|psi_t(phi_t(x)) - x|`` for the discrete forward and backward flows.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..exterior.fields import VectorField
from ..reports import ConvergenceReport
from .brownian import BrownianPaths, generate_paths, uniform_grid
from .integrate import integrate_backward_flow, integrate_flow


def _levels(paths: BrownianPaths, levels: Sequence[int]):
    """Coarsenings of ``paths`` with ``2^level`` steps for each level."""
    S = paths.n_steps
    for lv in levels:
        f = S // 2**lv
        if f * 2**lv != S or f < 1:
            raise ValueError(f"{S} steps cannot be coarsened to 2^{lv}")
        yield lv, paths.coarsen(f) if f > 1 else paths


def geometric_strong_error(mu: float, sigma: float, paths: BrownianPaths, levels: Sequence[int],
                           *, x0: float = 1.0, scheme: str = "heun",
                           threshold: float = 0.9) -> ConvergenceReport:
    """``E|X_T^dt - X_T|`` for geometric Brownian motion over ``dt = T 2^-level``."""
    b = VectorField.linear([[mu]])
    xi = VectorField.linear([[sigma]])
    dts, errs = [], []
    for lv, p in _levels(paths, levels):
        ens = integrate_flow(b, [xi], p, [[x0]], store="none", scheme=scheme, jacobian=False)
        T = p.time_grid[-1]
        exact = x0 * np.exp(mu * T + sigma * p.W()[:, -1, 0])
        keep = ens.retained
        errs.append(float(np.mean(np.abs(ens.final_positions[keep, 0, 0] - exact[keep]))))
        dts.append(float(p.dt[0]))
    rep = ConvergenceReport("dt", dts, errs, criterion=f"strong rate >= {threshold}")
    rep.verdict = bool(rep.rate >= threshold)
    return rep


def additive_noise_error(paths: BrownianPaths, *, T_decay: float = 0.5) -> float:
    """Max deviation of Heun from the exact one-step recursion for ``dX = -a X dt + dW``.

    With additive noise Heun is the deterministic trapezoidal map plus the
    increment: ``X+ = X + (-a)(X + (X - a X h + dW)) h / 2 + dW``.  The
    recursion is evaluated independently in closed form and compared to
    rounding.
    """
    a = T_decay
    b = VectorField.linear([[-a]])
    xi = VectorField.constant([1.0])
    ens = integrate_flow(b, [xi], paths, [[1.0]], store="all", jacobian=False)
    h = paths.dt
    dW = paths.increments[:, :, 0]
    X = np.ones(paths.n_paths)
    worst = 0.0
    for s in range(paths.n_steps):
        pred = X - a * X * h[s] + dW[:, s]
        X = X + 0.5 * (-a * X - a * pred) * h[s] + dW[:, s]
        worst = max(worst, float(np.max(np.abs(ens.positions[:, s + 1, 0, 0] - X))))
    return worst


def additive_exact_solution_error(paths: BrownianPaths) -> float:
    """Max deviation from ``X_t = x0 + c W_t`` for ``dX = c dW`` (zero drift)."""
    c = 0.7
    ens = integrate_flow(VectorField.zero(1), [VectorField.constant([c])], paths, [[1.0]],
                         store="all", jacobian=True)
    exact = 1.0 + c * paths.W()[:, :, 0]
    dev = float(np.max(np.abs(ens.positions[:, :, 0, 0] - exact)))
    jdev = float(np.max(np.abs(ens.jacobians - 1.0)))
    return max(dev, jdev)


def round_trip_sweep(b: VectorField, xis: Sequence[VectorField], paths: BrownianPaths, x0,
                     levels: Sequence[int], *, threshold: float = 0.9,
                     scheme: str = "heun", threads: int = 1) -> ConvergenceReport:
    """``E max_x |psi_T(phi_T(x)) - x|`` over ``dt = T 2^-level``."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    dts, errs = [], []
    for lv, p in _levels(paths, levels):
        fwd = integrate_flow(b, xis, p, x0, store="none", scheme=scheme, threads=threads)
        bwd = integrate_backward_flow(b, xis, p, fwd.final_positions, store="none",
                                      scheme=scheme, threads=threads)
        keep = fwd.retained & bwd.retained
        d = np.max(np.linalg.norm(bwd.final_positions - x0[None], axis=-1), axis=1)
        errs.append(float(np.mean(d[keep])))
        dts.append(float(p.dt[0]))
    rep = ConvergenceReport("dt", dts, errs, criterion=f"round-trip rate >= {threshold}")
    rep.verdict = bool(rep.rate >= threshold)
    return rep


def default_paths(N: int, T: float, finest_level: int, seed: int, n_paths: int) -> BrownianPaths:
    return generate_paths(N, uniform_grid(T, 2**finest_level), seed=seed, n_paths=n_paths)
