"""Brownian increments from a counter-based generator.

Each (seed, path, driver, stream) tuple keys an independent Philox stream;
step ``s`` of a path consumes raw words ``2s`` and ``2s + 1`` (Box-Muller), so
any increment is a pure function of ``(seed, path_id, driver, step)`` and is
independent of how paths are batched or scheduled.  Stream 0 holds the base
increments; stream ``l >= 1`` holds the Brownian-bridge variates used by the
``l``-th refinement.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

_MASK64 = (1 << 64) - 1


def _key(seed: int, path_id: int, driver: int, stream: int) -> np.ndarray:
    if not (0 <= driver < 1 << 16 and 0 <= stream < 1 << 16 and 0 <= path_id < 1 << 32):
        raise ValueError("path, driver or stream index out of range")
    word = (stream << 48) | (path_id << 16) | driver
    return np.array([int(seed) & _MASK64, word], dtype=np.uint64)


def standard_normals(seed: int, path_id: int, driver: int, count: int, stream: int = 0) -> np.ndarray:
    """``count`` standard normals for one (path, driver, stream)."""
    raw = np.random.Philox(key=_key(seed, path_id, driver, stream)).random_raw(2 * count)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    u1, u2 = u[0::2], u[1::2]
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@dataclass
class BrownianPaths:
    """Increments ``increments[p, s, j]`` of driver ``j`` over ``[t_s, t_{s+1}]`` on path ``p``."""

    N: int
    time_grid: np.ndarray
    increments: np.ndarray
    seed: int
    path_ids: np.ndarray
    level: int = 0

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]

    @property
    def n_steps(self) -> int:
        return self.time_grid.shape[0] - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.time_grid)

    def W(self) -> np.ndarray:
        """Driver values on the grid, shape ``(P, S + 1, N)`` with ``W_0 = 0``."""
        z = np.zeros((self.n_paths, 1, self.N))
        return np.concatenate([z, np.cumsum(self.increments, axis=1)], axis=1)

    def subset(self, idx) -> "BrownianPaths":
        idx = np.asarray(idx)
        return replace(self, increments=self.increments[idx], path_ids=self.path_ids[idx])

    def drivers(self, idx) -> "BrownianPaths":
        """Restrict to a subset of driver columns."""
        idx = list(idx)
        return replace(self, N=len(idx), increments=self.increments[:, :, idx])

    def coarsen(self, factor: int) -> "BrownianPaths":
        """Sum ``factor`` consecutive increments (grid subsampled accordingly)."""
        if self.n_steps % factor:
            raise ValueError("number of steps is not divisible by the coarsening factor")
        inc = self.increments.reshape(self.n_paths, self.n_steps // factor, factor, self.N).sum(axis=2)
        return replace(self, time_grid=self.time_grid[::factor].copy(), increments=inc)

    def refine(self) -> "BrownianPaths":
        """Halve every step by Brownian-bridge interpolation.

        Each coarse increment ``dW`` over ``dt`` becomes ``dW/2 + a`` and
        ``dW/2 - a`` with ``a ~ N(0, dt/4)`` drawn from stream ``level + 1``.
        """
        lvl = self.level + 1
        S = self.n_steps
        dt = self.dt
        Z = np.empty_like(self.increments)
        for p, pid in enumerate(self.path_ids):
            for j in range(self.N):
                Z[p, :, j] = standard_normals(self.seed, int(pid), j, S, stream=lvl)
        a = 0.5 * np.sqrt(dt)[None, :, None] * Z
        half = 0.5 * self.increments
        fine = np.stack([half + a, half - a], axis=2).reshape(self.n_paths, 2 * S, self.N)
        mid = 0.5 * (self.time_grid[:-1] + self.time_grid[1:])
        grid = np.empty(2 * S + 1)
        grid[0::2] = self.time_grid
        grid[1::2] = mid
        return replace(self, time_grid=grid, increments=fine, level=lvl)

    def __len__(self) -> int:
        return self.n_paths


def uniform_grid(T: float, n_steps: int) -> np.ndarray:
    return np.linspace(0.0, T, n_steps + 1)


def generate_paths(N: int, time_grid, seed: int, n_paths: int, *, path_offset: int = 0,
                   zero: bool = False) -> BrownianPaths:
    """Increments for paths ``path_offset .. path_offset + n_paths - 1``.

    ``zero=True`` gives the degenerate mode with all increments 0 (the SDE becomes an ODE).
    """
    grid = np.asarray(time_grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("time grid needs at least two points")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("time grid must be strictly increasing")
    S = grid.size - 1
    ids = np.arange(path_offset, path_offset + n_paths, dtype=np.int64)
    inc = np.zeros((n_paths, S, N))
    if not zero:
        sq = np.sqrt(np.diff(grid))
        for p, pid in enumerate(ids):
            for j in range(N):
                inc[p, :, j] = sq * standard_normals(seed, int(pid), j, S)
    return BrownianPaths(N, grid, inc, int(seed), ids)
