"""Mollification of forms and numerical commutator estimates.

The kernel is ``rho(x) = c exp(-1/(1 - |x|^2))`` on the unit ball with
``rho^eps(x) = eps^-n rho(x / eps)``.  Convolutions use a tensor Gauss-Legendre
rule over the kernel's bounding box; the discrete weights are renormalised to
sum to one so constants are reproduced exactly, and the analytic constant
``c`` is kept separately for the normalization certificate.

Commutator conventions: ``[L_b, rho^eps *] K = L_b K^eps - (L_b K)^eps`` and
the double commutator ``[L_xi, [L_xi, rho^eps *]] K
= L L K^eps - 2 L (L K)^eps + (L L K)^eps``.  Both are paired with a test form.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from math import gamma, pi
from typing import Callable, Sequence

import jax
import jax.numpy as jnp
import numpy as np
from scipy.integrate import quad

from .exterior import multiindex as mi
from .exterior.algebra import inner_values
from .exterior.calculus import lie_values
from .exterior.fields import KFormField, QuadratureGrid, TestForm, VectorField
from .exterior.norms import fiber_norm, l2_pairing, lp_norm
from .reports import ConvergenceReport, decreasing_in_trend, fit_rate


def _profile(r2: np.ndarray) -> np.ndarray:
    out = np.zeros_like(r2, dtype=float)
    m = r2 < 1.0
    out[m] = np.exp(-1.0 / (1.0 - r2[m]))
    return out


def _profile_grad(u: np.ndarray) -> np.ndarray:
    """Gradient of the unnormalised profile at points ``u`` of shape (..., n)."""
    r2 = np.sum(u**2, axis=-1)
    out = np.zeros_like(u)
    m = r2 < 1.0
    s = 1.0 - r2[m]
    out[m] = (np.exp(-1.0 / s) * (-2.0 / s**2))[:, None] * u[m]
    return out


@lru_cache(maxsize=None)
def profile_mass(n: int) -> float:
    """``int_{B(0,1)} exp(-1/(1-|x|^2)) dx`` by adaptive radial quadrature."""
    sphere = 2.0 * pi ** (n / 2) / gamma(n / 2)
    if n == 1:
        sphere = 2.0
    val, _ = quad(lambda r: r ** (n - 1) * np.exp(-1.0 / (1.0 - r * r)) if r < 1 else 0.0,
                  0.0, 1.0, epsabs=1e-15, epsrel=1e-13, limit=200)
    return sphere * val


@dataclass(frozen=True)
class Mollifier:
    """Radial bump kernel at scale ``epsilon`` in dimension ``n``."""

    epsilon: float
    n: int
    points_per_axis: int = 16

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.points_per_axis < 2:
            raise ValueError("points_per_axis must be at least 2")

    @property
    def normalization(self) -> float:
        """Analytic constant ``c`` with ``int rho = 1``."""
        return 1.0 / profile_mass(self.n)

    def rho(self, x) -> np.ndarray:
        """``rho^eps`` at points of shape (..., n)."""
        u = np.asarray(x, dtype=float) / self.epsilon
        return self.normalization * _profile(np.sum(u**2, axis=-1)) / self.epsilon**self.n

    def unit_rule(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Nodes ``z`` in the unit ball, weights ``W`` (sum 1) and gradient weights ``G``.

        ``sum_q W_q f(x - eps z_q)`` approximates ``(rho^eps * f)(x)`` and
        ``sum_q G_q f(x - eps z_q) / eps`` approximates ``int d_x rho^eps(x - y) f(y) dy``.
        """
        return _unit_rule(self.n, self.points_per_axis)

    def refine(self) -> "Mollifier":
        return replace(self, points_per_axis=self.points_per_axis * 3 // 2)

    def at(self, epsilon: float) -> "Mollifier":
        return replace(self, epsilon=epsilon)


@lru_cache(maxsize=None)
def _unit_rule(n: int, q: int):
    g, w = np.polynomial.legendre.leggauss(q)
    mesh = np.meshgrid(*([g] * n), indexing="ij")
    Z = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    wm = np.meshgrid(*([w] * n), indexing="ij")
    wq = np.prod(np.stack([m.reshape(-1) for m in wm]), axis=0)
    prof = _profile(np.sum(Z**2, axis=-1))
    keep = prof > 0
    Z, wq, prof = Z[keep], wq[keep], prof[keep]
    mass = float(wq @ prof)
    W = wq * prof / mass
    G = wq[:, None] * _profile_grad(Z) / mass
    # enforce the discrete moment identity sum_q G_q z_q^T = -I (integration by parts)
    G = G / -np.mean(np.diag(G.T @ Z))
    return Z, W, G


def normalization_error(m: Mollifier, points_per_axis: int = 128) -> float:
    """``|int rho^eps - 1|`` using the analytic constant and a fine tensor rule."""
    g, w = np.polynomial.legendre.leggauss(points_per_axis)
    x = m.epsilon * g
    mesh = np.meshgrid(*([x] * m.n), indexing="ij")
    X = np.stack([a.reshape(-1) for a in mesh], axis=-1)
    wm = np.meshgrid(*([w * m.epsilon] * m.n), indexing="ij")
    W = np.prod(np.stack([a.reshape(-1) for a in wm]), axis=0)
    return abs(float(W @ m.rho(X)) - 1.0)


def mollify(K: KFormField, m: Mollifier) -> KFormField:
    """Channelwise convolution ``rho^eps * K`` by the mollifier's quadrature rule."""
    if K.n != m.n:
        raise ValueError("mollifier and field dimensions differ")
    Z, W, _ = m.unit_rule()
    offsets = jnp.asarray(m.epsilon * Z)
    Wj = jnp.asarray(W)
    f = K.fn

    def fn(t, x):
        vals = jax.vmap(lambda z: f(t, x - z))(offsets)
        return Wj @ vals

    return K.with_fn(fn, label=f"moll({K.label})")


def mollify_vector_field(b: VectorField, m: Mollifier, shift=None) -> VectorField:
    """``rho^eps * b`` (optionally with the kernel centred at ``shift`` instead of 0)."""
    Z, W, _ = m.unit_rule()
    offsets = jnp.asarray(m.epsilon * Z)
    if shift is not None:
        offsets = offsets + jnp.asarray(shift, dtype=float)
    Wj = jnp.asarray(W)
    f, Df = b.fn, b.jac_fn
    from .exterior.fields import FieldMeta

    def fn(t, x):
        return Wj @ jax.vmap(lambda z: f(t, x - z))(offsets)

    def jac(t, x):
        # rho^eps * Db; valid for W^{1,1}_loc fields whose derivative is singular
        return jnp.tensordot(Wj, jax.vmap(lambda z: Df(t, x - z))(offsets), axes=1)

    return VectorField(b.n, fn, jac, meta=FieldMeta(label=f"moll_{m.epsilon}({b.label})"))


def mollify_distributional(K: Callable[[KFormField], float], m: Mollifier,
                           theta: KFormField) -> float:
    """Distribution-valued mollification: ``K(rho^eps * theta)``."""
    return float(K(mollify(theta, m)))


def pairing_functional(K: KFormField, grid: QuadratureGrid) -> Callable[[KFormField], float]:
    """The functional ``F -> <<K, F>>`` of a locally integrable form."""
    return lambda F: l2_pairing(K, F, grid)


def dirac_functional(x0, channel: int = 0) -> Callable[[KFormField], float]:
    x0 = np.asarray(x0, dtype=float)
    return lambda F: float(F(x0[None])[0, channel])


# commutators -----------------------------------------------------------------
@dataclass
class CommutatorEvaluation:
    epsilon: float
    value: float
    bound_rhs: float
    error_estimate: float
    split_value: float | None = None
    split_error_estimate: float | None = None
    fitted_constant: float | None = None
    budget: dict = field(default_factory=dict)

    @property
    def abs_value(self) -> float:
        return abs(self.value)

    def row(self) -> dict:
        return {"epsilon": self.epsilon, "value": self.value, "abs_value": self.abs_value,
                "bound_rhs": self.bound_rhs,
                "fitted_constant": self.fitted_constant if self.fitted_constant is not None else "",
                "error_estimate": self.error_estimate}


COMMUTATOR_COLUMNS = ("epsilon", "value", "abs_value", "bound_rhs", "fitted_constant",
                      "error_estimate")


def _check_inputs(m: Mollifier, theta: TestForm, grid: QuadratureGrid):
    if m.epsilon >= 1:
        raise ValueError("epsilon must be < 1")
    if not grid.contains_ball(theta.center, theta.support_radius):
        raise ValueError("test form support is not inside the grid box")


def _norm_grid(theta: TestForm, points: int = 40) -> QuadratureGrid:
    return QuadratureGrid.cube(theta.n, theta.support_radius + 1.0, points, center=theta.center)


def _sup_norms(theta: TestForm, K: KFormField, ng: QuadratureGrid):
    R = theta.support_radius
    th = lp_norm(theta, np.inf, ng, radius=R, center=theta.center)
    kk = lp_norm(K, np.inf, ng, radius=R + 1.0, center=theta.center)
    return th, kk


def _lie_closure(b: VectorField, F, t, n: int, k: int):
    """``x -> (L_b F)(x)`` for a pointwise closure ``F(x)``."""
    bf, Db = b.fn, b.jac_fn
    return lambda x: lie_values(F(x), jax.jacfwd(F)(x), bf(t, x), Db(t, x), n, k)


_COMPILED: dict = {}


def _compiled(key, build):
    """Per-(operator, fields) compiled pairing integrand, reused across scales."""
    fn = _COMPILED.get(key)
    if fn is None:
        if len(_COMPILED) > 16:
            _COMPILED.clear()
        fn = _COMPILED[key] = jax.jit(jax.vmap(build(), in_axes=(0, None, None, None)))
    return fn


def _pair_on_grid(kind: str, vfield: VectorField, K: KFormField, m: Mollifier,
                  theta: TestForm, grid: QuadratureGrid) -> float:
    n, k, f, th = K.n, K.k, K.fn, theta.fn

    def build():
        def point(x, eps, Z, W):
            t = 0.0
            L = lambda F: _lie_closure(vfield, F, t, n, k)  # noqa: E731
            Kf = lambda y: f(t, y)  # noqa: E731
            mol = lambda F: (lambda y: W @ jax.vmap(lambda z: F(y - eps * z))(Z))  # noqa: E731
            if kind == "b":
                val = L(mol(Kf))(x) - mol(L(Kf))(x)
            else:
                LK = L(Kf)
                val = L(L(mol(Kf)))(x) - 2.0 * L(mol(LK))(x) + mol(L(LK))(x)
            return jnp.dot(val, th(t, x))
        return point

    key = (kind, id(vfield), id(K), id(theta))
    fn = _compiled(key, build)
    Z, W, _ = m.unit_rule()
    mask = np.sum((grid.nodes - theta.center) ** 2, axis=1) < theta.support_radius**2
    vals = np.asarray(fn(jnp.asarray(grid.nodes[mask]), jnp.asarray(m.epsilon),
                         jnp.asarray(Z), jnp.asarray(W)))
    return float(grid.weights[mask] @ vals)


def _direct_b(b, K, m, theta, grid):
    return _pair_on_grid("b", b, K, m, theta, grid)


def _split_b(b: VectorField, K: KFormField, m: Mollifier, theta: TestForm,
             grid: QuadratureGrid, chunk: int = 256) -> float:
    """The same pairing written as a double integral with no derivative on K.

    ``int int d_x rho^eps(x-y) <K(y), theta(x)> (b(x) - b(y))
      + rho^eps(x-y) [ div b(y) <K(y), theta(x)>
      + sum_j theta_{I[j->m]}(x) (d_m b^{i_j}(x) - d_m b^{i_j}(y)) K_I(y) ]``
    """
    n, k = K.n, K.k
    Z, W, G = m.unit_rule()
    eps = m.epsilon
    T = mi.adjoint_slot_table(n, k) if k > 0 else None
    mask = np.sum((grid.nodes - theta.center) ** 2, axis=1) < theta.support_radius**2
    X, wx = grid.nodes[mask], grid.weights[mask]
    total = 0.0
    for s in range(0, X.shape[0], chunk):
        x = X[s:s + chunk]
        th = theta(x)
        bx, Dbx = b.value_and_jacobian(x)
        Y = x[:, None, :] - eps * Z[None]
        Yf = Y.reshape(-1, n)
        Ky = K(Yf).reshape(Y.shape[:2] + (-1,))
        by, Dby = b.value_and_jacobian(Yf)
        by = by.reshape(Y.shape[:2] + (n,))
        Dby = Dby.reshape(Y.shape[:2] + (n, n))
        kt = np.einsum("xqc,xc->xq", Ky, th)
        i1 = np.einsum("qn,xqn,xq->x", G, bx[:, None, :] - by, kt) / eps
        div_y = np.trace(Dby, axis1=-2, axis2=-1)
        i2 = np.einsum("q,xq,xq->x", W, div_y, kt)
        if T is not None:
            dD = Dbx[:, None] - Dby
            A = (th[:, None, T.in_idx] * dD[..., T.row, T.col]) @ T.S
            i2 = i2 + np.einsum("q,xqc,xqc->x", W, A, Ky)
        total += float(wx[s:s + chunk] @ (i1 + i2))
    return total


def commutator_b(b: VectorField, K: KFormField, m: Mollifier, theta: TestForm,
                 grid: QuadratureGrid, *, split: bool = True) -> CommutatorEvaluation:
    """``<< [L_b, rho^eps *] K, theta >>`` directly and via the double-integral split.

    Error estimates are ``|coarse - fine|`` with both the outer grid and the
    kernel rule refined.
    """
    _check_inputs(m, theta, grid)
    fine_grid, fine_m = grid.refine(), m.refine()
    v0 = _direct_b(b, K, m, theta, grid)
    v1 = _direct_b(b, K, fine_m, theta, fine_grid)
    ng = _norm_grid(theta)
    th, kk = _sup_norms(theta, K, ng)
    from .exterior.norms import w11_norm
    bw = w11_norm(b, ng, radius=theta.support_radius + 1.0, center=theta.center)
    ev = CommutatorEvaluation(m.epsilon, v1, th * kk * bw, abs(v1 - v0),
                              budget={"grid_nodes": int(fine_grid.nodes.shape[0]),
                                      "kernel_nodes": int(fine_m.unit_rule()[0].shape[0])})
    if split:
        s0 = _split_b(b, K, m, theta, grid)
        s1 = _split_b(b, K, fine_m, theta, fine_grid)
        ev.split_value, ev.split_error_estimate = s1, abs(s1 - s0)
    return ev


def _direct_xi(xi, K, m, theta, grid):
    return _pair_on_grid("xi", xi, K, m, theta, grid)


def double_commutator_xi(xi: VectorField, K: KFormField, m: Mollifier, theta: TestForm,
                         grid: QuadratureGrid) -> CommutatorEvaluation:
    """``<< [L_xi, [L_xi, rho^eps *]] K, theta >>`` by direct nested evaluation."""
    _check_inputs(m, theta, grid)
    fine_grid, fine_m = grid.refine(), m.refine()
    v0 = _direct_xi(xi, K, m, theta, grid)
    v1 = _direct_xi(xi, K, fine_m, theta, fine_grid)
    ng = _norm_grid(theta)
    th, kk = _sup_norms(theta, K, ng)
    mask = np.sum((ng.nodes - theta.center) ** 2, axis=1) <= (theta.support_radius + 1.0) ** 2
    pts, w = ng.nodes[mask], ng.weights[mask]
    v, D = xi.value_and_jacobian(pts)
    H = xi.hessian(pts)
    sup_xi, sup_dxi = fiber_norm(v).max(), fiber_norm(D).max()
    l1_d2, l1_d = float(w @ fiber_norm(H)), float(w @ fiber_norm(D))
    rhs = th * kk * (sup_xi * l1_d2 + sup_dxi * l1_d)
    return CommutatorEvaluation(m.epsilon, v1, rhs, abs(v1 - v0),
                                budget={"grid_nodes": int(fine_grid.nodes.shape[0]),
                                        "kernel_nodes": int(fine_m.unit_rule()[0].shape[0])})


def epsilon_sweep(op: str, params: dict, eps_list: Sequence[float], *,
                  ratio: float = 1e-2, tol: float | None = None) -> ConvergenceReport:
    """Evaluate a commutator over a decreasing list of scales.

    ``op`` is ``"b"`` (``params``: b, K, theta, grid, optional points_per_axis) or
    ``"xi"`` (xi, K, theta, grid).  The constant is calibrated on the coarsest
    scale.  Verdict: final |value| below ``tol`` (default ``ratio`` times the
    first |value|), positive fitted slope, and the calibrated bound at every scale.
    """
    eps = [float(e) for e in eps_list]
    if len(eps) < 3:
        raise ValueError("an epsilon sweep needs at least 3 scales")
    if any(e >= 1 for e in eps) or any(a <= b for a, b in zip(eps, eps[1:])):
        raise ValueError("eps_list must be strictly decreasing and below 1")
    n = params["K"].n
    q = params.get("points_per_axis", 16)
    evals = []
    for e in eps:
        m = Mollifier(e, n, q)
        if op == "b":
            evals.append(commutator_b(params["b"], params["K"], m, params["theta"], params["grid"],
                                      split=params.get("split", True)))
        elif op == "xi":
            evals.append(double_commutator_xi(params["xi"], params["K"], m, params["theta"],
                                              params["grid"]))
        else:
            raise ValueError(f"unknown commutator selector {op!r}")
    C = evals[0].abs_value / evals[0].bound_rhs if evals[0].bound_rhs > 0 else 0.0
    for ev in evals:
        ev.fitted_constant = C
    bound_ok = all(ev.abs_value <= C * ev.bound_rhs * (1 + 1e-12) + 3 * ev.error_estimate
                   for ev in evals)
    vals = [ev.abs_value for ev in evals]
    slope = fit_rate(eps, vals)
    threshold = ratio * vals[0] if tol is None else tol
    verdict = bool(vals[-1] < threshold and (slope > 0 or vals[0] == 0) and bound_ok)
    return ConvergenceReport(
        "epsilon", eps, vals, rate=slope, verdict=verdict,
        criterion=f"final |value| < {threshold:.3e}, slope > 0, calibrated bound",
        columns={"value": [ev.value for ev in evals],
                 "bound_rhs": [ev.bound_rhs for ev in evals],
                 "fitted_constant": [C] * len(evals),
                 "error_estimate": [ev.error_estimate for ev in evals]},
        info={"bound_holds": bound_ok, "final_ratio": vals[-1] / vals[0] if vals[0] else 0.0,
              "decreasing": decreasing_in_trend(vals), "evaluations": evals})
