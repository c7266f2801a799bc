"""A Hoelder drift with non-unique characteristics and the resulting non-unique weak solutions.

The drift ``b(x) = x/|x| (|x| ^ R)^alpha / (1 - alpha)`` has, through the
origin, the family of characteristics ``x_v(t - t0) = v (t - t0)^{1/(1-alpha)}``
for every unit vector ``v`` and start time ``t0 >= 0``.  They fill the ball
``|x| < t^{1/(1-alpha)}``; outside it the flow is unique.  Prescribing any
bounded value ``gamma_v(t0)`` along each characteristic inside the ball, and
the transported datum outside, gives a weak solution of the scalar transport
equation ``d_t u + b . grad u = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import jax.numpy as jnp
import numpy as np
from scipy.special import roots_legendre

from .exterior.algebra import transform_values
from .exterior.calculus import lie_derivative_adjoint
from .exterior.fields import FieldMeta, KFormField, TestForm, VectorField
from .flow.brownian import BrownianPaths
from .flow.integrate import integrate_flow
from .mollifier import Mollifier, mollify_vector_field
from .reports import ConvergenceReport, decreasing_in_trend, fit_rate


# ---------------------------------------------------------------------------
# the drift
def _check_alpha(alpha: float):
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


@dataclass(frozen=True)
class HolderDrift:
    """Radial Hoelder drift with exponent ``alpha``, cut off at radius ``R``."""

    alpha: float
    R: float
    n: int = 2

    def __post_init__(self):
        _check_alpha(self.alpha)
        if self.R <= 0:
            raise ValueError("cutoff radius must be positive")

    @property
    def c(self) -> float:
        return 1.0 / (1.0 - self.alpha)

    @property
    def bound(self) -> float:
        """``sup |b| = R^alpha / (1 - alpha)``."""
        return self.c * self.R**self.alpha

    def ball_radius(self, t) -> np.ndarray:
        """Radius ``t^{1/(1-alpha)}`` of the non-uniqueness ball at time ``t``."""
        return np.asarray(t, dtype=float) ** self.c

    def field(self) -> VectorField:
        a, R, c = self.alpha, self.R, self.c

        def fn(t, x):
            r2 = jnp.sum(x * x)
            pos = r2 > 0
            r = jnp.sqrt(jnp.where(pos, r2, 1.0))
            mag = c * jnp.minimum(r, R) ** a
            return jnp.where(pos, mag * x / r, 0.0 * x)

        def jac(t, x):
            n = x.shape[0]
            r2 = jnp.sum(x * x)
            pos = r2 > 0
            r = jnp.sqrt(jnp.where(pos, r2, 1.0))
            P = jnp.outer(x, x) / (r * r)
            eye = jnp.eye(n)
            inner = c * r ** (a - 1.0) * (eye + (a - 1.0) * P)
            outer = c * R**a / r * (eye - P)
            D = jnp.where(r < R, inner, outer)
            # the origin is singular; 0 keeps the variational equation finite there
            return jnp.where(pos, D, 0.0 * eye)

        return VectorField(self.n, fn, jac, meta=FieldMeta(holder_alpha=a, cutoff_R=R,
                                                           label=f"holder({a},{R})"))

    def backward_radius(self, r, t):
        """``|psi_t(x)|`` for ``|x| = r`` outside the ball, with ``d|psi|/dr``.

        Closed form of ``dr/dt = r^alpha/(1-alpha)`` below ``R`` and constant
        speed ``R^alpha/(1-alpha)`` above it.
        """
        a, R, c = self.alpha, self.R, self.c
        r = np.asarray(r, dtype=float)
        t = np.broadcast_to(np.asarray(t, dtype=float), r.shape)
        speed = self.bound
        e = 1.0 - a
        out = np.empty_like(r)
        dr = np.empty_like(r)
        below = r <= R
        with np.errstate(invalid="ignore", divide="ignore"):
            s = r[below] ** e - t[below]
            out[below] = s**c
            dr[below] = (out[below] / r[below]) ** a
            above = ~below
            t_out = (r[above] - R) / speed
            far = t_out >= t[above]
            ra = np.where(far, r[above] - speed * t[above], 0.0)
            rem = np.where(far, 0.0, t[above] - t_out)
            rb = np.maximum(R**e - rem, 0.0) ** c
            out[above] = np.where(far, ra, rb)
            dr[above] = np.where(far, 1.0, (rb / R) ** a)
        return out, dr

    def backward_flow(self, x, t):
        """``psi_t(x)`` and ``D psi_t(x)`` for points outside the ball (deterministic)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.linalg.norm(x, axis=-1)
        if np.any(r <= self.ball_radius(t) * (1 - 1e-14)):
            raise ValueError("backward flow is only unique outside the ball")
        r0, dr0 = self.backward_radius(r, t)
        u = x / r[:, None]
        P = np.einsum("mi,mj->mij", u, u)
        eye = np.eye(x.shape[-1])
        D = dr0[:, None, None] * P + (r0 / r)[:, None, None] * (eye - P)
        return r0[:, None] * u, D


class LinearRadialDrift:
    """Smooth control ``b(x) = lam x`` with the same ball construction (characteristics unique)."""

    def __init__(self, lam: float, alpha: float, n: int = 2):
        _check_alpha(alpha)
        self.lam, self.alpha, self.n, self.c = float(lam), float(alpha), n, 1.0 / (1.0 - alpha)

    def ball_radius(self, t):
        return np.asarray(t, dtype=float) ** self.c

    def field(self) -> VectorField:
        return VectorField.linear(self.lam * np.eye(self.n))

    def backward_flow(self, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        s = np.exp(-self.lam * t)
        return s * x, np.broadcast_to(s * np.eye(self.n), x.shape + (self.n,)).copy()


def holder_drift(alpha: float, R: float, n: int = 2) -> VectorField:
    return HolderDrift(alpha, R, n).field()


# ---------------------------------------------------------------------------
# characteristics
def explicit_characteristics(v, t, t0, alpha: float, R: float = np.inf) -> np.ndarray:
    """``v (t - t0)^{1/(1-alpha)}`` for a unit vector ``v`` and ``t >= t0 >= 0``."""
    _check_alpha(alpha)
    v = np.asarray(v, dtype=float)
    if not np.allclose(np.linalg.norm(v, axis=-1), 1.0, atol=1e-12):
        raise ValueError("v must be a unit vector")
    t, t0 = np.asarray(t, dtype=float), np.asarray(t0, dtype=float)
    if np.any(t0 < 0) or np.any(t < t0):
        raise ValueError("need t >= t0 >= 0")
    r = (t - t0) ** (1.0 / (1.0 - alpha))
    if np.any(r >= R):
        raise ValueError("characteristic leaves the cutoff region")
    return v * np.asarray(r)[..., None] if np.ndim(r) else v * float(r)


def t0_map(t: float, x, alpha: float, rtol: float = 1e-12):
    """Inverse of the characteristic family: ``t0 = t - |x|^{1-alpha}``, ``v = x/|x|``.

    Points on the ball boundary map to ``t0 = 0``.
    """
    _check_alpha(alpha)
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0):
        raise ValueError("the origin lies on every characteristic")
    rb = t ** (1.0 / (1.0 - alpha))
    if np.any(r > rb * (1 + rtol)):
        raise ValueError("point lies outside the ball (unique-flow region)")
    t0 = np.maximum(t - r ** (1.0 - alpha), 0.0)
    return t0, x / np.asarray(r)[..., None]


def characteristic_ode_residual(alpha: float, R: float, v, t0: float, T: float,
                                steps: Sequence[float], n_times: int = 16) -> ConvergenceReport:
    """Central-difference residual of ``x' = b(x)`` along an explicit characteristic.

    Interior times ``t`` in ``(t0, T)`` away from ``t0``; the residual is
    ``max |(x(t+h) - x(t-h))/(2h) - b(x(t))|`` for each step ``h``.
    """
    b = holder_drift(alpha, R, len(v))
    ts = np.linspace(t0 + 0.25 * (T - t0), T, n_times)
    errs = []
    for h in steps:
        xp = explicit_characteristics(v, ts + h, t0, alpha, R)
        xm = explicit_characteristics(v, ts - h, t0, alpha, R)
        x = explicit_characteristics(v, ts, t0, alpha, R)
        errs.append(float(np.max(np.abs((xp - xm) / (2 * h) - b(x)))))
    rep = ConvergenceReport("h", list(steps), errs,
                            criterion="rate >= 1.9 or exact to rounding")
    # alpha = 1/2 gives a quadratic characteristic, differenced exactly
    rep.verdict = bool(rep.rate >= 1.9 or max(errs) < 1e-9)
    return rep


# ---------------------------------------------------------------------------
# solutions
@dataclass
class GammaSelection:
    """Values ``gamma(v, t0)`` (vectorized: ``(M, n), (M,) -> (M, C)``) with a declared bound."""

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    bound: float
    label: str = ""

    def __call__(self, v, t0) -> np.ndarray:
        out = np.asarray(self.fn(np.asarray(v, dtype=float), np.asarray(t0, dtype=float)),
                         dtype=float)
        if np.any(np.abs(out) > self.bound * (1 + 1e-12)):
            raise ValueError(f"gamma selection {self.label!r} exceeds its declared bound")
        return out

    @classmethod
    def constant(cls, value, label: str = "") -> "GammaSelection":
        val = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(lambda v, t0: np.broadcast_to(val, (np.shape(t0)[0] if np.ndim(t0) else 1,)
                                                 + val.shape).copy(),
                   float(np.max(np.abs(val))), label or f"const{val.tolist()}")

    @classmethod
    def zero(cls, channels: int = 1) -> "GammaSelection":
        return cls.constant(np.zeros(channels), "zero")

    @classmethod
    def matched(cls, K0: KFormField) -> "GammaSelection":
        """The continuous selection: the outside solution's limit at the ball, ``K0(0)``.

        Backward characteristics from just outside the ball end at the origin.
        """
        return cls.constant(K0(np.zeros((1, K0.n)))[0], "matched")

    @classmethod
    def angular(cls, amplitude: float, freq: int = 1) -> "GammaSelection":
        """A direction-dependent bounded selection ``amplitude cos(freq angle(v))`` (n = 2)."""
        return cls(lambda v, t0: amplitude * np.cos(freq * np.arctan2(v[..., 1], v[..., 0]))[..., None],
                   abs(amplitude), f"angular{freq}")


def nonunique_solution(gamma: GammaSelection, K0: KFormField, t: float, x, drift=None,
                       *, alpha: float | None = None, R: float = 10.0) -> np.ndarray:
    """``u_gamma(t, x)``: pushforward of ``K0`` outside the ball, ``gamma_v(t0(t, x))`` inside.

    ``drift`` supplies ``ball_radius``, ``backward_flow`` and ``alpha``
    (default: ``HolderDrift(alpha, R, K0.n)``).
    """
    if drift is None:
        if alpha is None:
            raise ValueError("give either a drift or alpha")
        drift = HolderDrift(alpha, R, K0.n)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.empty((x.shape[0], K0.n_channels))
    r = np.linalg.norm(x, axis=-1)
    inside = r < drift.ball_radius(t)
    if np.any(~inside):
        if t == 0:
            out[~inside] = K0(x[~inside])
        else:
            psi, D = drift.backward_flow(x[~inside], t)
            out[~inside] = transform_values(K0(psi), D, K0.n, K0.k)
    if np.any(inside):
        xi = x[inside]
        if np.any(np.linalg.norm(xi, axis=-1) == 0):
            raise ValueError("the solution is not pointwise defined at the origin")
        t0, v = t0_map(t, xi, drift.alpha)
        out[inside] = gamma(v, t0)
    return out


# ---------------------------------------------------------------------------
# quadrature adapted to the ball
def _sphere_rule(n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Directions and weights on the unit sphere ``S^{n-1}`` (weights sum to its area)."""
    if n == 1:
        return np.array([[1.0], [-1.0]]), np.ones(2)
    if n == 2:
        a = 2 * np.pi * np.arange(m) / m
        return np.stack([np.cos(a), np.sin(a)], -1), np.full(m, 2 * np.pi / m)
    if n == 3:
        z, wz = roots_legendre(max(m // 2, 2))
        a = 2 * np.pi * np.arange(m) / m
        s = np.sqrt(1 - z**2)
        dirs = np.stack([np.outer(s, np.cos(a)), np.outer(s, np.sin(a)),
                         np.outer(z, np.ones(m))], -1).reshape(-1, 3)
        return dirs, np.outer(wz, np.full(m, 2 * np.pi / m)).reshape(-1)
    raise ValueError("ball quadrature supports n <= 3")


def _graded(a: float, b: float, q: int, cluster: str):
    """Gauss rule on [a, b] in ``s`` with ``r = a + (b - a) s^2`` (clusters at ``a``)."""
    s, w = roots_legendre(q)
    s = 0.5 * (s + 1)
    w = 0.5 * w
    if cluster == "left":
        return a + (b - a) * s**2, w * (b - a) * 2 * s
    return a + (b - a) * s, w * (b - a)


def ball_quadrature(n: int, r_max: float, splits: Sequence[float], q_r: int, q_a: int):
    """Nodes and weights on ``B(0, r_max)`` in polar form; radial panels split at ``splits``
    and graded toward the origin and each split radius."""
    edges = [0.0] + sorted(s for s in splits if 0.0 < s < r_max) + [r_max]
    dirs, wa = _sphere_rule(n, q_a)
    X, W = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        r, wr = _graded(a, b, q_r, "left")
        X.append((r[:, None, None] * dirs[None]).reshape(-1, n))
        W.append((wr[:, None] * r[:, None] ** (n - 1) * wa[None]).reshape(-1))
    return np.concatenate(X), np.concatenate(W)


def ball_l2_distance(gamma1: GammaSelection, gamma2: GammaSelection, K0: KFormField, t: float,
                     drift, q_r: int = 32, q_a: int = 64) -> float:
    """``||u_1(t) - u_2(t)||_{L^2}`` (only the ball contributes)."""
    rb = float(drift.ball_radius(t))
    X, W = ball_quadrature(K0.n, rb, [], q_r, q_a)
    d = nonunique_solution(gamma1, K0, t, X, drift) - nonunique_solution(gamma2, K0, t, X, drift)
    return float(np.sqrt(W @ np.sum(d**2, axis=-1)))


def ball_volume(n: int, r: float) -> float:
    from math import gamma as G, pi
    return pi ** (n / 2) / G(n / 2 + 1) * r**n


# ---------------------------------------------------------------------------
# the deterministic weak residual
@dataclass
class WeakResidualStudy:
    """Residuals of one selection at increasing quadrature levels."""

    label: str
    levels: list[tuple[int, int, int]]
    residuals: list[float]
    scale: float
    relative: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.relative = [abs(r) / self.scale for r in self.residuals]

    @property
    def final(self) -> float:
        return self.relative[-1]

    @property
    def decays(self) -> bool:
        return self.relative[-1] <= self.relative[0] or self.relative[-1] < 1e-12

    def rows(self) -> list[dict]:
        return [{"selection": self.label, "q_r": l[0], "q_a": l[1], "q_t": l[2], "residual": r,
                 "relative": rel} for l, r, rel in zip(self.levels, self.residuals, self.relative)]


def deterministic_weak_residual(gamma: GammaSelection, K0: KFormField, theta: TestForm,
                                window: tuple[float, float], drift, *, q_r: int = 24,
                                q_a: int = 32, q_t: int = 8) -> float:
    """``<<u(t_b), theta>> - <<u(t_a), theta>> + int <<u, L_b^T theta>> dt`` for ``u = u_gamma``.

    Zero for a weak solution of ``d_t u + L_b u = 0``.  Space integrals use
    the ball quadrature centred at the origin, split at the ball radius and
    at the drift cutoff; time uses Gauss-Legendre on the window.
    """
    ta, tb = map(float, window)
    if ta <= 0:
        raise ValueError("the window must start after t = 0 (singular initial layer)")
    if tb <= ta:
        raise ValueError("empty time window")
    b = drift.field()
    Lt = lie_derivative_adjoint(b, theta)
    r_max = float(np.linalg.norm(theta.center)) + theta.support_radius
    cut = [getattr(drift, "R", np.inf)]

    def pair(F: KFormField, t: float) -> float:
        X, W = ball_quadrature(K0.n, r_max, [float(drift.ball_radius(t))] + cut, q_r, q_a)
        u = nonunique_solution(gamma, K0, t, X, drift)
        return float(W @ np.sum(u * F(X), axis=-1))

    s, w = roots_legendre(q_t)
    ts = ta + 0.5 * (tb - ta) * (s + 1)
    ws = 0.5 * (tb - ta) * w
    integral = sum(wi * pair(Lt, ti) for ti, wi in zip(ts, ws))
    return pair(theta, tb) - pair(theta, ta) + integral


def weak_residual_study(gamma: GammaSelection, K0: KFormField, theta: TestForm, window, drift,
                        levels: Sequence[tuple[int, int, int]] = ((12, 16, 4), (24, 32, 8),
                                                                   (48, 64, 16))
                        ) -> WeakResidualStudy:
    """Residual of one selection over increasing quadrature levels, relative to
    ``sup|u| ||theta||_{L^1}``."""
    r_max = float(np.linalg.norm(theta.center)) + theta.support_radius
    X, W = ball_quadrature(K0.n, r_max, [], 64, 64)
    th_l1 = float(W @ np.sqrt(np.sum(theta(X) ** 2, axis=-1)))
    sup_u = max(float(np.max(np.abs(K0(X)))), gamma.bound)
    res = [deterministic_weak_residual(gamma, K0, theta, window, drift, q_r=a, q_a=b_, q_t=c)
           for a, b_, c in levels]
    return WeakResidualStudy(gamma.label, [tuple(l) for l in levels], res, sup_u * th_l1)


def holder_probe_ratio(b: VectorField, alpha: float, radius: float, n_pairs: int = 10_000,
                       seed: int = 0) -> float:
    """``max |b(x) - b(y)| / |x - y|^alpha`` over uniform random pairs in ``B(0, radius)``."""
    rng = np.random.default_rng(seed)
    n = b.n

    def sample(m):
        d = rng.normal(size=(m, n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return d * radius * rng.uniform(size=(m, 1)) ** (1.0 / n)

    x, y = sample(n_pairs), sample(n_pairs)
    num = np.linalg.norm(b(x) - b(y), axis=-1)
    den = np.linalg.norm(x - y, axis=-1) ** alpha
    ok = den > 0
    return float(np.max(num[ok] / den[ok]))


# ---------------------------------------------------------------------------
# selection by noise
def mollified_drifts(drift: HolderDrift, eps_list: Sequence[float], *, points_per_axis: int = 12,
                     shift_fraction: float = 0.0) -> list[VectorField]:
    """``rho^eps * b`` for each ``eps``; a nonzero ``shift_fraction`` offsets the kernel
    by ``+-shift_fraction * eps`` along ``e_1`` with alternating sign (an asymmetric
    perturbation that makes consecutive members pick different branches at the origin)."""
    out = []
    for i, eps in enumerate(eps_list):
        shift = None
        if shift_fraction:
            shift = np.zeros(drift.n)
            shift[0] = (-1) ** i * shift_fraction * eps
        out.append(mollify_vector_field(drift.field(), Mollifier(eps, drift.n, points_per_axis),
                                        shift))
    return out


def _coupled_gaps(drifts, xis, paths, x0, threads):
    ens = [integrate_flow(b, xis, paths, x0, store="all", jacobian=False, threads=threads)
           for b in drifts]
    gaps = []
    for a, c in zip(ens[:-1], ens[1:]):
        d = np.linalg.norm(a.positions - c.positions, axis=-1)  # (P, T, M)
        gaps.append(float(np.max(np.mean(np.max(d, axis=1), axis=0))))
    return gaps


def noise_selection_experiment(alpha: float, R: float, xi_amplitude: float,
                               eps_list: Sequence[float], paths: BrownianPaths, *,
                               x0=None, shift_fraction: float = 0.3, points_per_axis: int = 12,
                               assert_noise: bool = True, threads: int = 1) -> ConvergenceReport:
    """``E[sup_t |phi^{eps_i} - phi^{eps_{i+1}}|]`` for consecutive mollified drifts from ``x0``.

    Noise on: constant ``xi_j = xi_amplitude e_j`` on the given paths.  Noise
    off: the same drifts on a zero path.  The errors column is the noise-on gap;
    ``columns["noise_off_gap"]`` the noise-off gap.  The verdict only concerns
    the noise-on gaps decreasing in trend; noise-off gaps are reported as observed.
    """
    if assert_noise and xi_amplitude <= 0:
        raise ValueError("noise amplitude must be positive")
    drift = HolderDrift(alpha, R, paths.N)
    n = drift.n
    x0 = np.zeros((1, n)) if x0 is None else np.atleast_2d(np.asarray(x0, dtype=float))
    drifts = mollified_drifts(drift, eps_list, points_per_axis=points_per_axis,
                              shift_fraction=shift_fraction)
    xis = [VectorField.constant(xi_amplitude * np.eye(n)[j]) for j in range(n)]
    on = _coupled_gaps(drifts, xis, paths, x0, threads)
    still = BrownianPaths(paths.N, paths.time_grid, np.zeros_like(paths.increments[:1]),
                          paths.seed, paths.path_ids[:1])
    off = _coupled_gaps(drifts, [], still, x0, threads)
    T = float(paths.time_grid[-1])
    return ConvergenceReport("epsilon", list(eps_list[1:]), on, verdict=decreasing_in_trend(on),
                             criterion="noise-on consecutive gaps decrease in trend",
                             columns={"noise_off_gap": off},
                             info={"branch_scale": float(min(T ** (1 / (1 - alpha)), R)),
                                   "xi_amplitude": xi_amplitude, "paths": paths.n_paths})
