"""Forward and backward integration of the characteristic SDE with Jacobians.

    d phi = b(t, phi) dt + sum_k xi_k(phi) o dW^k

The default scheme is Stratonovich-Heun; ``"ito-euler"`` uses Euler-Maruyama
with the correction drift ``1/2 sum_k (xi_k . grad) xi_k``.  The Jacobian
``D phi`` follows the variational equation integrated by the same scheme
(i.e. the scheme applied to the augmented system).

Paths are processed in fixed-size chunks, optionally on a thread pool; chunk
composition never depends on the worker count, so results are bit-identical
for any ``threads``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from ..exterior.fields import VectorField
from ..reports import ConvergenceReport, decreasing_in_trend
from .brownian import BrownianPaths

SCHEMES = ("heun", "ito-euler")
CHUNK_PATHS = 32


class FlowFailure(RuntimeError):
    """Raised when too many paths are flagged (non-finite state or J <= 0)."""


Observer = Callable[[int, float, np.ndarray, np.ndarray | None], Any]


@dataclass
class FlowEnsemble:
    """Trajectories of a set of initial points over a time grid, per Brownian path.

    ``positions[p, i, m]`` is the state at ``times[i]`` (in integration order)
    started from ``initial_points[m]`` (or ``initial_points[p, m]`` when the
    start points differ per path); ``jacobians`` likewise (or ``None``).
    """

    initial_points: np.ndarray
    times: np.ndarray
    time_indices: np.ndarray
    positions: np.ndarray | None
    jacobians: np.ndarray | None
    path_ids: np.ndarray
    flagged: np.ndarray
    direction: str = "forward"
    scheme: str = "heun"
    observations: Any = None
    final_positions: np.ndarray | None = None
    final_jacobians: np.ndarray | None = None

    @property
    def dets(self) -> np.ndarray | None:
        return None if self.jacobians is None else np.linalg.det(self.jacobians)

    @property
    def retained(self) -> np.ndarray:
        return ~self.flagged

    @property
    def n_flagged(self) -> int:
        return int(self.flagged.sum())

    def dump_rows(self) -> list[dict]:
        """Rows ``(path_id, point, t, x..., Dphi..., J)`` for CSV snapshots."""
        rows = []
        if self.positions is None:
            return rows
        n = self.initial_points.shape[-1]
        dets = self.dets
        for p, pid in enumerate(self.path_ids):
            for i, t in enumerate(self.times):
                for m in range(self.positions.shape[2]):
                    r = {"path_id": int(pid), "point": m, "t": float(t)}
                    for a in range(n):
                        r[f"x{a + 1}"] = float(self.positions[p, i, m, a])
                    if self.jacobians is not None:
                        for a in range(n):
                            for c in range(n):
                                r[f"Dphi{a + 1}{c + 1}"] = float(self.jacobians[p, i, m, a, c])
                        r["J"] = float(dets[p, i, m])
                    rows.append(r)
        return rows


def _eval(field_: VectorField, X: np.ndarray, t: float, need_jac: bool):
    shape = X.shape
    flat = X.reshape(-1, shape[-1])
    if need_jac:
        v, D = field_.value_and_jacobian(flat, t, jit=True)
        return v.reshape(shape), D.reshape(shape + (shape[-1],))
    return field_(flat, t, jit=True).reshape(shape), None


def _ito_correction(xis: Sequence[VectorField], X: np.ndarray, t: float, need_jac: bool):
    """``c = 1/2 sum_k Dxi_k xi_k`` and its Jacobian."""
    shape = X.shape
    flat = X.reshape(-1, shape[-1])
    c = np.zeros_like(flat)
    Dc = np.zeros(flat.shape + (shape[-1],)) if need_jac else None
    for xi in xis:
        v, D = xi.value_and_jacobian(flat, t, jit=True)
        c += 0.5 * np.einsum("mij,mj->mi", D, v)
        if need_jac:
            H = xi.hessian(flat, t, jit=True)
            Dc += 0.5 * (D @ D + np.einsum("mijk,mj->mik", H, v))
    return c.reshape(shape), (Dc.reshape(shape + (shape[-1],)) if need_jac else None)


class _Stepper:
    def __init__(self, b, xis, scheme, sign, need_jac):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
        self.b, self.xis, self.scheme, self.sign, self.need_jac = b, list(xis), scheme, sign, need_jac

    def _drift(self, X, J, t):
        v, D = _eval(self.b, X, t, self.need_jac)
        if self.scheme == "ito-euler" and self.xis:
            c, Dc = _ito_correction(self.xis, X, t, self.need_jac)
            # the correction keeps its sign under time reversal (sign^2 = 1)
            v = v + self.sign * c
            if self.need_jac:
                D = D + self.sign * Dc
        dJ = D @ J if self.need_jac else None
        return self.sign * v, (self.sign * dJ if self.need_jac else None)

    def _noise(self, X, J, t):
        out = []
        for xi in self.xis:
            v, D = _eval(xi, X, t, self.need_jac)
            out.append((self.sign * v, self.sign * (D @ J) if self.need_jac else None))
        return out

    def step(self, X, J, t0, t1, h, dW):
        """One step from ``t0`` to ``t1`` (``h = |t1 - t0|``); ``dW`` has shape (P, N)."""
        a, aJ = self._drift(X, J, t0)
        noise = self._noise(X, J, t0)
        Xp = X + a * h
        Jp = J + aJ * h if self.need_jac else None
        for k, (s, sJ) in enumerate(noise):
            w = dW[:, k][:, None, None]
            Xp = Xp + s * w
            if self.need_jac:
                Jp = Jp + sJ * w[..., None]
        if self.scheme == "ito-euler":
            return Xp, Jp
        a2, aJ2 = self._drift(Xp, Jp, t1)
        noise2 = self._noise(Xp, Jp, t1)
        Xn = X + 0.5 * (a + a2) * h
        Jn = J + 0.5 * (aJ + aJ2) * h if self.need_jac else None
        for k, ((s, sJ), (s2, sJ2)) in enumerate(zip(noise, noise2)):
            w = dW[:, k][:, None, None]
            Xn = Xn + 0.5 * (s + s2) * w
            if self.need_jac:
                Jn = Jn + 0.5 * (sJ + sJ2) * w[..., None]
        return Xn, Jn


def _bad(X, J):
    bad = ~np.all(np.isfinite(X.reshape(X.shape[0], -1)), axis=1)
    if J is not None:
        finite = np.all(np.isfinite(J.reshape(J.shape[0], -1)), axis=1)
        dets = np.where(finite[:, None], np.linalg.det(np.where(np.isfinite(J), J, 0.0)), 1.0)
        bad |= ~finite | np.any(dets <= 0, axis=1)
    return bad


def _run_chunk(stepper, x0, paths: BrownianPaths, order, store, observer, need_jac):
    P, (M, n) = paths.n_paths, x0.shape[-2:]
    X = np.broadcast_to(x0, (P, M, n)).copy()
    x_reset = X.copy()
    J = np.broadcast_to(np.eye(n), (P, M, n, n)).copy() if need_jac else None
    flagged = np.zeros(P, dtype=bool)
    grid = paths.time_grid
    pos, jac, obs = [], [], []

    def record(i_out, tidx):
        if store == "all" or (isinstance(store, int) and i_out % store == 0):
            pos.append(X.copy())
            if need_jac:
                jac.append(J.copy())
        if observer is not None:
            obs.append(observer(i_out, float(grid[tidx]), X, J))

    record(0, order[0])
    for i, (a, c) in enumerate(zip(order[:-1], order[1:])):
        s = min(a, c)
        h = abs(grid[c] - grid[a])
        with np.errstate(all="ignore"):
            X, J = stepper.step(X, J, grid[a], grid[c], h, paths.increments[:, s, :])
        bad = _bad(X, J)
        if bad.any():
            flagged |= bad
            X[bad] = x_reset[bad]
            if need_jac:
                J[bad] = np.eye(n)
        record(i + 1, c)
    return pos, jac, obs, flagged, X, J


def _integrate(b, xis, paths, x0s, order, direction, scheme, store, observer, threads,
               jacobian, max_flagged_fraction):
    x0 = np.atleast_2d(np.asarray(x0s, dtype=float))
    per_path = x0.ndim == 3
    if per_path and x0.shape[0] != paths.n_paths:
        raise ValueError("per-path initial points need one set per path")
    if x0.shape[-1] != b.n or any(xi.n != b.n for xi in xis):
        raise ValueError("dimension mismatch between points and vector fields")
    if len(xis) > paths.N:
        raise ValueError(f"{len(xis)} noise fields but only {paths.N} drivers")
    sign = 1.0 if direction == "forward" else -1.0
    stepper = _Stepper(b, xis, scheme, sign, jacobian)
    chunks = [np.arange(s, min(s + CHUNK_PATHS, paths.n_paths))
              for s in range(0, paths.n_paths, CHUNK_PATHS)]
    job = lambda idx: _run_chunk(stepper, x0[idx] if per_path else x0,  # noqa: E731
                                 paths.subset(idx), order, store, observer, jacobian)
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(job, chunks))
    else:
        results = [job(c) for c in chunks]
    flagged = np.concatenate([r[3] for r in results])
    if flagged.mean() > max_flagged_fraction:
        raise FlowFailure(f"{int(flagged.sum())} of {flagged.size} paths flagged "
                          f"(limit {max_flagged_fraction:.0%})")
    positions = jacobians = None
    if results[0][0]:
        positions = np.concatenate([np.stack(r[0], axis=1) for r in results], axis=0)
        if jacobian:
            jacobians = np.concatenate([np.stack(r[1], axis=1) for r in results], axis=0)
    observations = None
    if observer is not None:
        observations = [np.concatenate([np.asarray(r[2][i]) for r in results], axis=0)
                        for i in range(len(order))]
    times_idx = np.asarray(order)
    if isinstance(store, int):
        times_idx = times_idx[::store]
    final_X = np.concatenate([r[4] for r in results], axis=0)
    final_J = np.concatenate([r[5] for r in results], axis=0) if jacobian else None
    return FlowEnsemble(x0, paths.time_grid[times_idx], times_idx, positions, jacobians,
                        paths.path_ids.copy(), flagged, direction, scheme, observations,
                        final_X, final_J)


def integrate_flow(b: VectorField, xis: Sequence[VectorField], paths: BrownianPaths, x0s, *,
                   scheme: str = "heun", start_index: int = 0, stop_index: int | None = None,
                   store: str | int = "all", observer: Observer | None = None,
                   threads: int = 1, jacobian: bool = True,
                   max_flagged_fraction: float = 0.01) -> FlowEnsemble:
    """Forward flow ``phi_{s,t}(x)`` from grid time ``start_index`` to ``stop_index``.

    ``store`` is ``"all"``, ``"none"`` or an integer stride.  ``observer(i, t, X, J)``
    is called at every grid time with arrays whose leading axis is the path axis
    and must return an array with that leading axis.
    """
    stop = paths.n_steps if stop_index is None else stop_index
    if not 0 <= start_index <= stop <= paths.n_steps:
        raise ValueError("invalid start/stop grid indices")
    order = list(range(start_index, stop + 1))
    return _integrate(b, xis, paths, x0s, order, "forward", scheme, store, observer, threads,
                      jacobian, max_flagged_fraction)


def integrate_backward_flow(b: VectorField, xis: Sequence[VectorField], paths: BrownianPaths,
                            x0s, *, start_index: int | None = None, stop_index: int = 0,
                            scheme: str = "heun", store: str | int = "all",
                            observer: Observer | None = None, threads: int = 1,
                            jacobian: bool = True,
                            max_flagged_fraction: float = 0.01) -> FlowEnsemble:
    """Backward flow ``phi_{t,s}`` from grid time ``start_index`` down to ``stop_index``.

    The time-reversed system uses negated fields and the same increments in
    reverse order, so ``phi_{t,0}`` approximately inverts ``phi_{0,t}``.
    ``x0s`` may carry a leading path axis to start each path from its own points.
    """
    start = paths.n_steps if start_index is None else start_index
    if not 0 <= stop_index <= start <= paths.n_steps:
        raise ValueError("invalid start/stop grid indices")
    order = list(range(start, stop_index - 1, -1))
    return _integrate(b, xis, paths, x0s, order, "backward", scheme, store, observer, threads,
                      jacobian, max_flagged_fraction)


def jacobian_moments(ensemble: FlowEnsemble, p: float) -> tuple[float, float]:
    """Estimate ``sup_x E[sup_t |D phi|^p]`` (Frobenius norm, grid max over t).

    Returns the estimate and its Monte Carlo standard error at the maximizing point.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if ensemble.jacobians is None or ensemble.retained.sum() == 0:
        raise ValueError("ensemble has no retained Jacobian data")
    J = ensemble.jacobians[ensemble.retained]
    fro = np.sqrt(np.sum(J**2, axis=(-2, -1)))  # (P, T, M)
    sup_t = np.max(fro, axis=1) ** p  # (P, M)
    mean = sup_t.mean(axis=0)
    m = int(np.argmax(mean))
    P = sup_t.shape[0]
    se = float(sup_t[:, m].std(ddof=1) / np.sqrt(P)) if P > 1 else float("nan")
    return float(mean[m]), se


def flow_convergence_sweep(b_sequence: Sequence[VectorField], xis: Sequence[VectorField],
                           paths: BrownianPaths, x0s, p: float = 2.0, *,
                           params: Sequence[float] | None = None, threads: int = 1,
                           scheme: str = "heun") -> ConvergenceReport:
    """Coupled errors of each flow against the last (finest) member of the sequence.

    Reports ``sup_x E[sup_t |phi^n - phi|^p]`` and the Jacobian analogue on
    shared paths; verdict: the position errors decrease in trend.
    """
    if len(b_sequence) < 3:
        raise ValueError("a convergence sweep needs at least 3 members")
    ens = [integrate_flow(b, xis, paths, x0s, threads=threads, scheme=scheme)
           for b in b_sequence]
    ref = ens[-1]
    keep = ref.retained.copy()
    for e in ens:
        keep &= e.retained
    pos_err, jac_err = [], []
    for e in ens[:-1]:
        d = np.linalg.norm(e.positions[keep] - ref.positions[keep], axis=-1)
        pos_err.append(float(np.max(np.mean(np.max(d, axis=1) ** p, axis=0))))
        dj = np.sqrt(np.sum((e.jacobians[keep] - ref.jacobians[keep]) ** 2, axis=(-2, -1)))
        jac_err.append(float(np.max(np.mean(np.max(dj, axis=1) ** p, axis=0))))
    prm = list(params[:-1]) if params is not None else list(range(1, len(b_sequence)))
    all_zero = all(e == 0 for e in pos_err)
    verdict = all_zero or decreasing_in_trend(pos_err)
    return ConvergenceReport("member" if params is None else "epsilon", prm, pos_err,
                             verdict=verdict, criterion="position errors decrease in trend",
                             columns={"jacobian_error": jac_err},
                             info={"p": p, "paths_used": int(keep.sum()),
                                   "jacobian_decreasing": all(e == 0 for e in jac_err)
                                   or decreasing_in_trend(jac_err)})
