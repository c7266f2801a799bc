"""Pushforward solutions of the stochastic transport equation for k-forms and their checks.

The solution is ``K(t) = (phi_t)_* K0`` with coefficients
``K(t)_J(x) = K0_I(psi_t(x)) det Dpsi_t(x)[I, J]`` where ``psi_t`` is the
backward flow.  Pairings ``<<K(s), F>>`` against fixed forms are evaluated by
the change of variables ``x = phi_s(y)``:

    <<K(s), F>> = int K0_I(y) Jphi_s(y) [Lambda^k (Dphi_s(y))^{-1}]_{I,J} F_J(phi_s(y)) dy,

so only forward flows from fixed quadrature nodes are needed.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import jax
import jax.numpy as jnp
import numpy as np
from scipy.special import roots_jacobi

from .exterior import multiindex as mi
from .exterior.algebra import minors, transform_values
from .exterior.calculus import (curl3, lie_derivative, lie_derivative_adjoint, lie_values,
                                vector_to_two_form)
from .exterior.fields import KFormField, QuadratureGrid, TestForm, VectorField, _Evaluator
from .flow.brownian import BrownianPaths, generate_paths, uniform_grid
from .flow.integrate import FlowEnsemble, integrate_backward_flow, integrate_flow
from .random_fields import random_form, random_vector_field
from .reports import ConvergenceReport, fit_rate


# ---------------------------------------------------------------------------
# pushforward solution
@dataclass
class SampledSolution:
    """Per-path values of ``(phi_t)_* K0`` at a fixed set of points: ``values[p, m, :]``."""

    t: float
    points: np.ndarray
    values: np.ndarray
    path_ids: np.ndarray
    flagged: np.ndarray


def solve_pushforward(K0: KFormField, flow: FlowEnsemble, t: float | None = None) -> SampledSolution:
    """``(phi_t)_* K0`` at the start points of a backward-flow ensemble.

    ``flow`` must come from :func:`integrate_backward_flow` started at grid
    time ``t`` and run down to time 0; its final state is ``psi_t`` and ``Dpsi_t``.
    """
    if flow.direction != "backward":
        raise ValueError("solve_pushforward needs a backward-flow ensemble")
    t_start = float(flow.times[0])
    if t is not None and not np.isclose(t, t_start, rtol=0, atol=1e-12):
        raise ValueError(f"requested t = {t} is off the ensemble's start time {t_start}")
    if not np.isclose(flow.times[-1], 0.0):
        raise ValueError("backward ensemble must run down to time 0")
    psi, Dpsi = flow.final_positions, flow.final_jacobians
    P, M, n = psi.shape
    K = K0(psi.reshape(-1, n), 0.0).reshape(P, M, -1)
    vals = transform_values(K, Dpsi, n, K0.k)
    pts = flow.initial_points
    return SampledSolution(t_start, pts, vals, flow.path_ids, flow.flagged)


class PushforwardSolution:
    """Lazy per-path solution ``x -> (phi_t)_* K0 (x)`` on a shared set of Brownian paths."""

    def __init__(self, K0: KFormField, b: VectorField, xis: Sequence[VectorField],
                 paths: BrownianPaths, *, scheme: str = "heun", threads: int = 1):
        self.K0, self.b, self.xis, self.paths = K0, b, list(xis), paths
        self.scheme, self.threads = scheme, threads

    def time_index(self, t: float) -> int:
        idx = np.flatnonzero(np.isclose(self.paths.time_grid, t, rtol=0, atol=1e-12))
        if idx.size == 0:
            raise ValueError(f"t = {t} is not on the driver grid")
        return int(idx[0])

    def __call__(self, x, t: float) -> np.ndarray:
        """Values ``(P, M, C)``; ``x`` is ``(M, n)`` or per-path ``(P, M, n)``."""
        i = self.time_index(t)
        x = np.asarray(x, dtype=float)
        if i == 0:
            v = self.K0(x.reshape(-1, x.shape[-1])).reshape(x.shape[:-1] + (-1,))
            return np.broadcast_to(v, (self.paths.n_paths,) + v.shape[-2:]).copy()
        ens = integrate_backward_flow(self.b, self.xis, self.paths, x, start_index=i,
                                      store="none", scheme=self.scheme, threads=self.threads)
        return solve_pushforward(self.K0, ens).values


def pullback_values(F_at_phi: np.ndarray, Dphi: np.ndarray, n: int, k: int) -> np.ndarray:
    """``(phi^* F)_I(x) = F_J(phi(x)) det Dphi(x)[J, I]``."""
    return transform_values(F_at_phi, Dphi, n, k)


def _cov_weights(Dphi: np.ndarray, n: int, k: int) -> np.ndarray:
    """``Jphi * Lambda^k(Dphi^{-1})`` for the change of variables in pairings."""
    det = np.linalg.det(Dphi)
    inv = np.linalg.inv(Dphi)
    return det[..., None, None] * minors(inv, n, k)


class _Stacked:
    """Compiled evaluation of several forms of equal degree at once: ``(M, m, C)``."""

    def __init__(self, forms: Sequence[KFormField]):
        fns = [f.fn for f in forms]
        self.m = len(fns)
        self.C = forms[0].n_channels
        self.n = forms[0].n
        self._ev = _Evaluator(lambda t, x: jnp.stack([f(t, x) for f in fns]))

    def __call__(self, X: np.ndarray, t: float) -> np.ndarray:
        flat = X.reshape(-1, self.n)
        return self._ev(t, flat, True).reshape(X.shape[:-1] + (self.m, self.C))


def _check_support(theta: TestForm, grid: QuadratureGrid):
    if not grid.contains_ball(theta.center, theta.support_radius):
        raise ValueError("test form support exceeds the grid box")


# ---------------------------------------------------------------------------
# weak formulation
@dataclass
class WeakResidualReport:
    """Per-path terms of the Ito weak form and their sum.

    ``terms`` holds ``(pairing_end, pairing_start, drift, martingale, correction)``
    per path; ``residual = end - start + drift + martingale - correction``.
    """

    times: np.ndarray
    pairing_series: np.ndarray
    drift: np.ndarray
    martingale: np.ndarray
    correction: np.ndarray
    residual: np.ndarray
    rms: float
    error_estimate: float = float("nan")
    flagged: int = 0
    info: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        out = []
        for p in range(self.residual.shape[0]):
            out.append({"path": p, "pairing_start": self.pairing_series[p, 0],
                        "pairing_end": self.pairing_series[p, -1], "drift": self.drift[p],
                        "martingale": self.martingale[p], "correction": self.correction[p],
                        "residual": self.residual[p]})
        return out


def _weak_terms(K0, b, xis, paths, theta, grid, scheme, threads):
    n, k = K0.n, K0.k
    forms = [theta, lie_derivative_adjoint(b, theta)]
    forms += [lie_derivative_adjoint(xi, theta) for xi in xis]
    if xis:
        corr = lie_derivative_adjoint(xis[0], lie_derivative_adjoint(xis[0], theta))
        for xi in xis[1:]:
            corr = corr + lie_derivative_adjoint(xi, lie_derivative_adjoint(xi, theta))
        forms.append(corr)
    stacked = _Stacked(forms)
    Y, w = grid.nodes, grid.weights
    K0y = K0(Y)

    def observer(i, t, X, J):
        F = stacked(X, t)  # (P, M, m, C)
        Wc = _cov_weights(J, n, k)  # (P, M, C, C)
        g = np.einsum("mi,pmij->pmj", K0y, Wc)
        return np.einsum("m,pmj,pmfj->pf", w, g, F)

    ens = integrate_flow(b, xis, paths, Y, scheme=scheme, store="none", observer=observer,
                         threads=threads)
    obs = np.stack(ens.observations, axis=1)  # (P, S+1, m)
    keep = ens.retained
    return obs[keep], paths.increments[keep], ens.n_flagged


def _assemble_weak(obs, dW, dt, n_noise):
    pair = obs[..., 0]
    drift = np.einsum("ps,s->p", obs[:, :-1, 1], dt)
    if n_noise:
        mart = np.einsum("psk,psk->p", obs[:, :-1, 2:2 + n_noise], dW[:, :, :n_noise])
        corr = 0.5 * np.einsum("ps,s->p", obs[:, :-1, 2 + n_noise], dt)
    else:
        mart = np.zeros(obs.shape[0])
        corr = np.zeros(obs.shape[0])
    res = pair[:, -1] - pair[:, 0] + drift + mart - corr
    return pair, drift, mart, corr, res


def weak_residual(K0: KFormField, b: VectorField, xis: Sequence[VectorField],
                  paths: BrownianPaths, theta: TestForm, grid: QuadratureGrid, *,
                  scheme: str = "heun", threads: int = 1,
                  estimate: bool = True) -> WeakResidualReport:
    """Residual of the Ito weak form for the pushforward solution, per path.

    ``<<K_t, theta>> - <<K_0, theta>> + int <<K_s, L_b^T theta>> ds
      + sum_k int <<K_s, L_xi_k^T theta>> dW^k - 1/2 sum_k int <<K_s, (L_xi_k^T)^2 theta>> ds``
    with left-point sums on the driver grid.  ``grid`` is the quadrature grid
    for the initial positions ``y``; it must contain the preimages of the test
    form's support over the window.  The error estimate is the RMS change of
    the residual when the same paths are coarsened by a factor of two.
    """
    _check_support(theta, grid)
    if len(xis) > paths.N:
        raise ValueError("more noise fields than drivers")
    obs, dW, nflag = _weak_terms(K0, b, xis, paths, theta, grid, scheme, threads)
    pair, drift, mart, corr, res = _assemble_weak(obs, dW, paths.dt, len(xis))
    est = float("nan")
    if estimate and paths.n_steps % 2 == 0 and paths.n_steps >= 2:
        coarse = paths.coarsen(2)
        o2, d2, _ = _weak_terms(K0, b, xis, coarse, theta, grid, scheme, threads)
        r2 = _assemble_weak(o2, d2, coarse.dt, len(xis))[-1]
        m = min(r2.size, res.size)
        est = float(np.sqrt(np.mean((res[:m] - r2[:m]) ** 2)))
    # boundary-leak diagnostic: mass of theta seen from the outer ring of the y-grid
    return WeakResidualReport(paths.time_grid, pair, drift, mart, corr, res,
                              float(np.sqrt(np.mean(res**2))), est, nflag)


def weak_residual_convergence(K0, b, xis, paths: BrownianPaths, theta, grid, levels: Sequence[int],
                              *, threshold: float, threads: int = 1) -> ConvergenceReport:
    """RMS weak residual over coarsenings ``paths.coarsen(2**l)`` for each ``l`` in ``levels``."""
    dts, rms = [], []
    for lv in levels:
        p = paths.coarsen(2**lv) if lv else paths
        rep = weak_residual(K0, b, xis, p, theta, grid, threads=threads, estimate=False)
        dts.append(float(p.dt[0]))
        rms.append(rep.rms)
    rep = ConvergenceReport("dt", dts, rms, criterion=f"rate >= {threshold}")
    rep.verdict = bool(rep.rate >= threshold)
    return rep


# ---------------------------------------------------------------------------
# Kunita-Ito-Wentzell identity
@dataclass
class KIWReport:
    lhs: np.ndarray
    rhs: np.ndarray
    gap: np.ndarray
    cross_term: np.ndarray
    rms_gap: float
    info: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        return [{"path": p, "lhs": self.lhs[p], "rhs": self.rhs[p], "gap": self.gap[p],
                 "cross_term": self.cross_term[p]} for p in range(self.gap.size)]


def _stack_drivers(cols: list, empty_shape: tuple) -> np.ndarray:
    return np.stack(cols, axis=2) if cols else np.zeros(empty_shape)


def _pullback_pairings(stacked: _Stacked, theta_x: np.ndarray, w: np.ndarray, n: int, k: int):
    def observer(i, t, X, J):
        F = stacked(X, t)  # (P, M, m, C)
        Mn = minors(J, n, k)  # [J, I]
        pulled = np.einsum("pmfj,pmji->pmfi", F, Mn)
        return np.einsum("m,mi,pmfi->pf", w, theta_x, pulled)

    return observer


def kiw_residual(K0: KFormField, G: KFormField, H: Sequence[KFormField], b: VectorField,
                 xis: Sequence[VectorField], paths: BrownianPaths, theta: TestForm,
                 grid: QuadratureGrid, *, coupling: str = "independent", scheme: str = "heun",
                 threads: int = 1) -> KIWReport:
    """Both sides of the Ito-Wentzell formula for ``K(t) = K0 + t G + sum_i W^i_t H_i``.

    Paired with ``theta``:
    ``phi_t^* K(t) = K0 + int phi^* G ds + sum_i int phi^* H_i dW^i + int phi^* L_b K ds
      + sum_j int phi^* L_xi_j K dB^j + sum_ij int phi^* L_xi_j H_i d[W^i, B^j]
      + 1/2 sum_j int phi^* L_xi_j L_xi_j K ds``.

    ``coupling="independent"``: the flow drivers ``B`` are the last ``len(xis)``
    columns of ``paths`` and ``W`` the first ``len(H)``; the cross variation is
    zero and ``cross_term`` reports its empirical counterpart
    ``sum_s <<phi^* L_xi_j H_i, theta>> dW^i dB^j``.  ``coupling="same"``: ``W^i = B^i``
    and the cross term uses ``d[W^i, B^j] = delta_ij dt``.
    """
    _check_support(theta, grid)
    n, k = K0.n, K0.k
    nW, nB = len(H), len(xis)
    if coupling == "independent":
        if paths.N < nW + nB:
            raise ValueError("independent coupling needs len(H) + len(xis) drivers")
        W_inc = paths.increments[:, :, :nW]
        B_paths = paths.drivers(range(nW, nW + nB))
    elif coupling == "same":
        if nW != nB or paths.N < nB:
            raise ValueError("same-driver coupling needs len(H) == len(xis) <= N")
        W_inc = paths.increments[:, :, :nW]
        B_paths = paths.drivers(range(nB))
    else:
        raise ValueError(f"unknown coupling {coupling!r}")
    for f in [G, *H]:
        if f.n != n or f.k != k:
            raise ValueError("channel shape mismatch between K0, G and H")
    base = [K0, G, *H]  # K(s) = base[0] + s base[1] + sum_i W^i_s base[2 + i]
    LB = [lie_derivative(b, f) for f in base]
    LX = [[lie_derivative(xi, f) for f in base] for xi in xis]
    LLX = [[lie_derivative(xi, g) for g in row] for xi, row in zip(xis, LX)]
    forms = base + LB + [f for row in LX for f in row] + [f for row in LLX for f in row]
    stacked = _Stacked(forms)
    X0, w = grid.nodes, grid.weights
    theta_x = theta(X0)
    ens = integrate_flow(b, xis, B_paths, X0, scheme=scheme, store="none", threads=threads,
                         observer=_pullback_pairings(stacked, theta_x, w, n, k))
    keep = ens.retained
    obs = np.stack(ens.observations, axis=1)[keep]  # (P, S+1, nforms)
    W_inc = W_inc[keep]
    dB = B_paths.increments[keep]
    P, S1, _ = obs.shape
    nb = len(base)
    t = paths.time_grid
    dt = paths.dt
    Wv = np.concatenate([np.zeros((P, 1, nW)), np.cumsum(W_inc, axis=1)], axis=1)  # (P, S+1, nW)
    coef = np.concatenate([np.ones((P, S1, 1)), np.broadcast_to(t[None, :, None], (P, S1, 1)), Wv],
                          axis=2)  # (P, S+1, nb)

    def combine(block):  # block (P, S+1, nb) -> pairing of the combination K(s)
        return np.einsum("psb,psb->ps", block, coef)

    o = 0
    pK = combine(obs[:, :, o:o + nb]); o += nb
    pLB = combine(obs[:, :, o:o + nb]); o += nb
    pLX = _stack_drivers([combine(obs[:, :, o + j * nb:o + (j + 1) * nb]) for j in range(nB)],
                         (P, S1, 0))
    raw_LX = obs[:, :, o:o + nB * nb].reshape(P, S1, nB, nb); o += nB * nb
    pLLX = _stack_drivers([combine(obs[:, :, o + j * nb:o + (j + 1) * nb]) for j in range(nB)],
                          (P, S1, 0))
    pG = obs[:, :, 1]
    pH = obs[:, :, 2:2 + nW]
    lhs = pK[:, -1]
    L = slice(0, -1)
    rhs = pK[:, 0] + pG[:, L] @ dt + np.einsum("psi,psi->p", pH[:, L], W_inc)
    rhs = rhs + pLB[:, L] @ dt + np.einsum("psj,psj->p", pLX[:, L], dB)
    rhs = rhs + 0.5 * np.einsum("psj,s->p", pLLX[:, L], dt)
    # <<phi^* L_xi_j H_i, theta>> is raw_LX[..., j, 2 + i]
    LH = raw_LX[:, L, :, 2:2 + nW]  # (P, S, nB, nW)
    if coupling == "same":
        cross = np.einsum("psii,s->p", LH, dt)
        rhs = rhs + cross
    else:
        cross = np.einsum("psji,psi,psj->p", LH, W_inc, dB)
    gap = lhs - rhs
    return KIWReport(lhs, rhs, gap, cross, float(np.sqrt(np.mean(gap**2))),
                     info={"flagged": ens.n_flagged, "coupling": coupling})


def kiw_transport_gap(K0: KFormField, b: VectorField, xis: Sequence[VectorField],
                      paths: BrownianPaths, theta: TestForm, grid: QuadratureGrid, *,
                      scheme: str = "heun", threads: int = 1) -> KIWReport:
    """Ito-Wentzell check for the transport solution ``K(t) = (phi_t)_* K0``.

    For the solution every drift and martingale term cancels and the identity
    reduces to ``<<phi_t^* K(t), theta>> = <<K0, theta>>``.  ``K(t)`` is computed
    from an independently integrated backward flow started at ``phi_t(x)``, so
    the gap measures the forward/backward consistency of the discrete flows.
    """
    _check_support(theta, grid)
    n, k = K0.n, K0.k
    X0, w = grid.nodes, grid.weights
    th = theta(X0)
    fwd = integrate_flow(b, xis, paths, X0, scheme=scheme, store="none", threads=threads)
    bwd = integrate_backward_flow(b, xis, paths, fwd.final_positions, scheme=scheme,
                                  store="none", threads=threads)
    Kt = solve_pushforward(K0, bwd).values  # K(t) at phi_t(x), (P, M, C)
    pulled = pullback_values(Kt, fwd.final_jacobians, n, k)
    keep = fwd.retained & bwd.retained
    lhs = np.einsum("m,mi,pmi->p", w, th, pulled)[keep]
    rhs = np.full(lhs.shape, float(w @ np.sum(K0(X0) * th, axis=1)))
    gap = lhs - rhs
    return KIWReport(lhs, rhs, gap, np.zeros_like(gap), float(np.sqrt(np.mean(gap**2))),
                     info={"flagged": int((~keep).sum()), "case": "transport"})


# ---------------------------------------------------------------------------
# chains and the conservation law
def simplex_rule(k: int, order: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss-Jacobi rule on the reference k-simplex, exact to degree ``order``.

    Returns barycentric-free reference coordinates ``u`` (m, k) with weights
    summing to ``1/k!``.
    """
    if k == 0:
        return np.zeros((1, 0)), np.ones(1)
    q = (order + 2) // 2
    axes = []
    for d in range(k):
        # collapse direction d carries weight (1 - s)^(k - 1 - d)
        a = k - 1 - d
        x, wt = roots_jacobi(q, a, 0.0)
        s = 0.5 * (x + 1.0)
        axes.append((s, wt * 0.5 ** (a + 1)))
    pts, wts = [], []
    for combo in itertools.product(*[range(q)] * k):
        s = [axes[d][0][i] for d, i in enumerate(combo)]
        w = np.prod([axes[d][1][i] for d, i in enumerate(combo)])
        u = np.zeros(k)
        rem = 1.0
        for d in range(k):
            u[d] = s[d] * rem
            rem *= 1.0 - s[d]
        pts.append(u)
        wts.append(w)
    return np.array(pts), np.array(wts)


@dataclass
class Chain:
    """Affine k-simplices in R^n with orientation signs: ``vertices[s]`` has shape (k + 1, n)."""

    vertices: np.ndarray
    signs: np.ndarray
    order: int = 5

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        if self.vertices.ndim == 2:
            self.vertices = self.vertices[None]
        self.signs = np.broadcast_to(np.asarray(self.signs, dtype=float),
                                     (self.vertices.shape[0],)).copy()

    @property
    def k(self) -> int:
        return self.vertices.shape[1] - 1

    @property
    def n(self) -> int:
        return self.vertices.shape[2]

    def nodes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Quadrature nodes (S, m, n), tangent matrices (S, n, k) and weights (S, m)."""
        u, w = simplex_rule(self.k, self.order)
        V = self.vertices
        T = np.transpose(V[:, 1:] - V[:, :1], (0, 2, 1))  # (S, n, k)
        X = V[:, :1] + np.einsum("snk,mk->smn", T, u)
        return X, T, self.signs[:, None] * w[None, :]

    def integrate(self, K: KFormField, t: float = 0.0) -> float:
        X, T, w = self.nodes()
        S, m, n = X.shape
        vals = K(X.reshape(-1, n), t).reshape(S, m, -1)
        rm = _row_minors(np.broadcast_to(T[:, None], (S, m, n, self.k)), n, self.k)
        return float(np.sum(w * np.einsum("smi,smi->sm", vals, rm)))

    def to_json(self) -> dict:
        return {"k": self.k, "n": self.n, "order": self.order,
                "simplices": [{"vertices": v.tolist(), "sign": float(s)}
                              for v, s in zip(self.vertices, self.signs)]}

    @classmethod
    def from_json(cls, d: dict) -> "Chain":
        return cls(np.array([s["vertices"] for s in d["simplices"]]),
                   np.array([s.get("sign", 1.0) for s in d["simplices"]]), d.get("order", 5))

    @classmethod
    def unit_square(cls, lo=(0.0, 0.0), size: float = 1.0, order: int = 5) -> "Chain":
        a = np.asarray(lo, dtype=float)
        e1, e2 = np.array([size, 0.0]), np.array([0.0, size])
        tri = [[a, a + e1, a + e1 + e2], [a, a + e1 + e2, a + e2]]
        return cls(np.array(tri), np.ones(2), order)

    @classmethod
    def segment(cls, p0, p1, order: int = 5) -> "Chain":
        return cls(np.array([[p0, p1]], dtype=float), np.ones(1), order)


def _row_minors(T: np.ndarray, n: int, k: int) -> np.ndarray:
    """``[..., I] = det T[I, :]`` for an (n x k) tangent matrix."""
    if k == 0:
        return np.ones(T.shape[:-2] + (1,))
    rows = np.array(mi.basis(n, k), dtype=int)
    sub = T[..., rows, :]  # (..., C, k, k)
    return np.linalg.det(sub)


@dataclass
class ConservationReport:
    initial: float
    final: np.ndarray
    relative_gap: np.ndarray
    rms_gap: float
    flagged: int = 0

    def rows(self) -> list[dict]:
        return [{"path": p, "initial": self.initial, "final": self.final[p],
                 "relative_gap": self.relative_gap[p]} for p in range(self.final.size)]


def conservation_check(K0: KFormField, chain: Chain, b: VectorField, xis: Sequence[VectorField],
                       paths: BrownianPaths, *, scheme: str = "heun",
                       threads: int = 1) -> ConservationReport:
    """``int_{Omega_0} K0`` against ``int_{phi_t(Omega_0)} K(t)`` per path (``t`` = grid end).

    Chain quadrature nodes are advected as particles; pushed tangents are
    ``Dphi_t T``.  ``K(t)`` at the pushed nodes comes from the backward flow.
    """
    if chain.k != K0.k or chain.n != K0.n:
        raise ValueError("chain dimension must equal the form degree")
    X, T, w = chain.nodes()
    S, m, n = X.shape
    k = chain.k
    I0 = chain.integrate(K0)
    flat = X.reshape(-1, n)
    fwd = integrate_flow(b, xis, paths, flat, scheme=scheme, store="none", threads=threads)
    bwd = integrate_backward_flow(b, xis, paths, fwd.final_positions, scheme=scheme,
                                  store="none", threads=threads)
    Kt = solve_pushforward(K0, bwd).values  # (P, S*m, C)
    P = Kt.shape[0]
    Tn = np.einsum("pxab,xbk->pxak", fwd.final_jacobians,
                   np.repeat(T, m, axis=0))  # (P, S*m, n, k)
    rm = _row_minors(Tn, n, k)
    if np.any(np.abs(np.linalg.det(np.einsum("pxak,pxal->pxkl", Tn, Tn))) < 1e-300):
        raise ValueError("degenerate pushed simplex")
    It = np.einsum("x,pxi,pxi->p", w.reshape(-1), Kt, rm)
    keep = fwd.retained & bwd.retained
    It = It[keep]
    scale = abs(I0) if I0 != 0 else 1.0
    gap = np.abs(It - I0) / scale
    return ConservationReport(I0, It, gap, float(np.sqrt(np.mean(gap**2))), int((~keep).sum()))


# ---------------------------------------------------------------------------
# specializations
def _fd_grad(f, x, h):
    n = x.shape[-1]
    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        cols.append((f(x + e) - f(x - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def specialization_suite(seed: int = 0, n_cases: int = 10, h: float = 1e-4,
                         flow_steps: int = 400, T: float = 0.3) -> dict:
    """Channelwise checks of the classical specializations on random smooth fields.

    * volume forms: ``L_v (rho dx^1..dx^n) = div(rho v) dx^1..dx^n`` (n = 2, 3)
    * 0-forms: ``L_v f = v . grad f``
    * n = 3, k = 2: ``L_v B = curl(B x v) + v div B`` (so ``-curl(v x B)`` for div-free B)
    * the k = n pushforward solution solves the continuity equation and the
      k = 0 pushforward solution solves the scalar transport equation
      (finite differences in t and x of backward-flow solutions).

    Right-hand sides use central differences with step ``h``; the tolerance is
    ``C h^2`` with ``C`` from the field scales.
    """
    rng = np.random.default_rng(seed)
    tol_fd = 1e-6
    out = {}
    worst = {"volume": 0.0, "scalar": 0.0, "mhd": 0.0}
    for case in range(n_cases):
        n = 2 + case % 2
        v = random_vector_field(rng, n)
        rho = random_form(rng, n, n)
        f = random_form(rng, n, 0)
        x = rng.uniform(-1, 1, size=(8, n))
        lhs = lie_derivative(v, rho)(x)[:, 0]
        flux = lambda y: rho(y)[..., 0:1] * v(y)  # noqa: E731
        div = np.trace(_fd_grad(flux, x, h), axis1=-2, axis2=-1)
        worst["volume"] = max(worst["volume"], float(np.max(np.abs(lhs - div))))
        lhs0 = lie_derivative(v, f)(x)[:, 0]
        rhs0 = np.sum(v(x) * _fd_grad(lambda y: f(y)[..., 0], x, h), axis=-1)
        worst["scalar"] = max(worst["scalar"], float(np.max(np.abs(lhs0 - rhs0))))
        v3 = random_vector_field(rng, 3)
        Bv = random_vector_field(rng, 3)
        B2 = KFormField(3, 2, lambda t, y, g=Bv.fn: vector_to_two_form(g(t, y)))
        x3 = rng.uniform(-1, 1, size=(8, 3))
        L = lie_derivative(v3, B2)(x3)
        BxV = lambda y: np.cross(Bv(y), v3(y))  # noqa: E731
        D = _fd_grad(BxV, x3, h)
        curl = np.stack([D[:, 2, 1] - D[:, 1, 2], D[:, 0, 2] - D[:, 2, 0], D[:, 1, 0] - D[:, 0, 1]], -1)
        divB = np.trace(_fd_grad(Bv, x3, h), axis1=-2, axis2=-1)
        rhs3 = vector_to_two_form(curl + v3(x3) * divB[:, None])
        worst["mhd"] = max(worst["mhd"], float(np.max(np.abs(L - rhs3))))
    for key, val in worst.items():
        out[key] = {"max_residual": val, "tolerance": tol_fd, "pass": val < tol_fd}

    # pushforward solutions, deterministic flows
    res_cont, res_scal = 0.0, 0.0
    dt = T / flow_steps
    for case in range(max(2, n_cases // 5)):
        n = 2
        b = random_vector_field(rng, n, scale=0.5)
        rho0 = random_form(rng, n, n)
        f0 = random_form(rng, n, 0)
        paths = generate_paths(1, uniform_grid(T, flow_steps), seed=seed, n_paths=1, zero=True)
        x = rng.uniform(-0.5, 0.5, size=(6, n))
        hx = 1e-3
        stencil = [x] + [x + s * hx * np.eye(n)[i] for i in range(n) for s in (1, -1)]
        pts = np.concatenate(stencil)
        i1 = flow_steps
        vals = {}
        for off in (-1, 0, 1):
            ens = integrate_backward_flow(b, [], paths, pts, start_index=i1 - 1 + off, store="none")
            vals[off] = (solve_pushforward(rho0, ens).values[0, :, 0],
                         solve_pushforward(f0, ens).values[0, :, 0])
        M = x.shape[0]
        t_mid = paths.time_grid[i1 - 1]
        bx = b(x, t_mid)
        for which, store in ((0, "cont"), (1, "scal")):
            u = {o: vals[o][which] for o in vals}
            dudt = (u[1][:M] - u[-1][:M]) / (2 * dt)
            c = u[0]
            grads = np.stack([(c[(1 + 2 * i) * M:(2 + 2 * i) * M] - c[(2 + 2 * i) * M:(3 + 2 * i) * M])
                              / (2 * hx) for i in range(n)], axis=-1)
            if which == 0:
                divb = np.trace(b.jacobian(x, t_mid), axis1=-2, axis2=-1)
                r = dudt + np.sum(bx * grads, axis=-1) + divb * c[:M]
                res_cont = max(res_cont, float(np.max(np.abs(r))))
            else:
                r = dudt + np.sum(bx * grads, axis=-1)
                res_scal = max(res_scal, float(np.max(np.abs(r))))
    tol_flow = 1e-4
    out["continuity_solution"] = {"max_residual": res_cont, "tolerance": tol_flow,
                                  "pass": res_cont < tol_flow}
    out["transport_solution"] = {"max_residual": res_scal, "tolerance": tol_flow,
                                 "pass": res_scal < tol_flow}
    out["pass"] = all(v["pass"] for v in out.values() if isinstance(v, dict))
    return out
