"""Increasing multi-indices and the sign tables used by the form algebra.

Coefficients of a k-form on R^n are stored on the C(n, k) strictly increasing
multi-indices in lexicographic order.  Every antisymmetrization is precomputed
here as a sparse table of (output channel, input channel(s), sign) entries and
applied as a gather followed by a product with a constant sign matrix, which
works identically on numpy arrays and inside traced jax closures.

Internally indices are 0-based; :class:`MultiIndex` exposes the 1-based form.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np


@dataclass(frozen=True, order=True)
class MultiIndex:
    """A strictly increasing tuple of indices in ``1..n``."""

    indices: tuple[int, ...]
    n: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        object.__setattr__(self, "indices", idx)
        if len(idx) > self.n:
            raise ValueError(f"degree {len(idx)} exceeds dimension {self.n}")
        if any(i < 1 or i > self.n for i in idx):
            raise ValueError(f"indices {idx} outside 1..{self.n}")
        if any(a >= b for a, b in zip(idx, idx[1:])):
            raise ValueError(f"indices {idx} are not strictly increasing")

    @property
    def k(self) -> int:
        return len(self.indices)

    @property
    def position(self) -> int:
        """Channel number of this index in the lexicographic storage order."""
        return channel_of(self.n, tuple(i - 1 for i in self.indices))

    def __str__(self) -> str:
        if not self.indices:
            return "1"
        return "^".join(f"dx{i}" for i in self.indices)


def all_multi_indices(n: int, k: int) -> list[MultiIndex]:
    return [MultiIndex(tuple(i + 1 for i in c), n) for c in basis(n, k)]


@lru_cache(maxsize=None)
def basis(n: int, k: int) -> tuple[tuple[int, ...], ...]:
    """0-based increasing index tuples in storage order."""
    if k < 0 or k > n:
        raise ValueError(f"degree {k} not in 0..{n}")
    return tuple(itertools.combinations(range(n), k))


@lru_cache(maxsize=None)
def _position_map(n: int, k: int) -> dict[tuple[int, ...], int]:
    return {c: i for i, c in enumerate(basis(n, k))}


def channel_of(n: int, idx: tuple[int, ...]) -> int:
    return _position_map(n, len(idx))[tuple(idx)]


def n_channels(n: int, k: int) -> int:
    return comb(n, k)


def sort_sign(seq) -> tuple[int, tuple[int, ...]]:
    """Sign of the permutation sorting ``seq`` and the sorted tuple.

    Returns ``(0, ())`` if ``seq`` has a repeated entry.
    """
    seq = list(seq)
    if len(set(seq)) != len(seq):
        return 0, ()
    sign = 1
    arr = seq[:]
    # insertion sort counting transpositions
    for i in range(1, len(arr)):
        j = i
        while j > 0 and arr[j - 1] > arr[j]:
            arr[j - 1], arr[j] = arr[j], arr[j - 1]
            sign = -sign
            j -= 1
    return sign, tuple(arr)


def _sign_matrix(n_terms: int, out: list[int], signs: list[int], n_out: int) -> np.ndarray:
    S = np.zeros((max(n_terms, 1), n_out))
    for t, (o, s) in enumerate(zip(out, signs)):
        S[t, o] += s
    return S[:n_terms] if n_terms else np.zeros((0, n_out))


@dataclass(frozen=True)
class WedgeTable:
    a_idx: np.ndarray
    b_idx: np.ndarray
    S: np.ndarray


@lru_cache(maxsize=None)
def wedge_table(n: int, j: int, k: int) -> WedgeTable:
    out, a, b, sg = [], [], [], []
    for o, K in enumerate(basis(n, j + k)):
        for pos in itertools.combinations(range(j + k), j):
            I = tuple(K[p] for p in pos)
            J = tuple(K[p] for p in range(j + k) if p not in pos)
            s, _ = sort_sign(I + J)
            out.append(o)
            a.append(channel_of(n, I))
            b.append(channel_of(n, J))
            sg.append(s)
    S = _sign_matrix(len(out), out, sg, n_channels(n, j + k))
    return WedgeTable(np.array(a, dtype=int), np.array(b, dtype=int), S)


@dataclass(frozen=True)
class ContractTable:
    l_idx: np.ndarray
    a_idx: np.ndarray
    S: np.ndarray


@lru_cache(maxsize=None)
def contract_table(n: int, k: int) -> ContractTable:
    """(i_X a)_J = sum_l X^l a_{(l, J)} with a_{(l,J)} antisymmetrically extended."""
    out, ls, a, sg = [], [], [], []
    for o, J in enumerate(basis(n, k - 1)):
        for l in range(n):
            s, srt = sort_sign((l,) + J)
            if s == 0:
                continue
            out.append(o)
            ls.append(l)
            a.append(channel_of(n, srt))
            sg.append(s)
    S = _sign_matrix(len(out), out, sg, n_channels(n, k - 1))
    return ContractTable(np.array(ls, dtype=int), np.array(a, dtype=int), S)


@dataclass(frozen=True)
class DerivTable:
    in_idx: np.ndarray
    dir_idx: np.ndarray
    S: np.ndarray


@lru_cache(maxsize=None)
def d_table(n: int, k: int) -> DerivTable:
    """(d a)_K = sum_p (-1)^p d_{K_p} a_{K without K_p}."""
    out, ins, dirs, sg = [], [], [], []
    for o, K in enumerate(basis(n, k + 1)):
        for p in range(k + 1):
            rest = K[:p] + K[p + 1:]
            out.append(o)
            ins.append(channel_of(n, rest))
            dirs.append(K[p])
            sg.append(-1 if p % 2 else 1)
    S = _sign_matrix(len(out), out, sg, n_channels(n, k + 1))
    return DerivTable(np.array(ins, dtype=int), np.array(dirs, dtype=int), S)


@dataclass(frozen=True)
class HodgeTable:
    perm: np.ndarray  # output channel o takes input channel perm[o]
    signs: np.ndarray


@lru_cache(maxsize=None)
def hodge_table(n: int, k: int) -> HodgeTable:
    """star(dx^I) = eps(I, I^c) dx^{I^c}."""
    C = n_channels(n, k)
    perm = np.zeros(C, dtype=int)
    signs = np.zeros(C)
    for i, I in enumerate(basis(n, k)):
        Ic = tuple(m for m in range(n) if m not in I)
        s, _ = sort_sign(I + Ic)
        o = channel_of(n, Ic)
        perm[o] = i
        signs[o] = s
    return HodgeTable(perm, signs)


@dataclass(frozen=True)
class SlotTable:
    """Terms ``out += sign * F[in_idx] * M[row, col]`` for slot-replacement sums."""

    in_idx: np.ndarray
    row: np.ndarray
    col: np.ndarray
    S: np.ndarray


@lru_cache(maxsize=None)
def lie_slot_table(n: int, k: int) -> SlotTable:
    """Second term of the Lie derivative: sum_j K_{I[j->l]} d_{i_j} b^l.

    ``M`` is the Jacobian ``Db[l, m] = d_m b^l``.
    """
    out, ins, rows, cols, sg = [], [], [], [], []
    for o, I in enumerate(basis(n, k)):
        for j in range(k):
            for l in range(n):
                repl = I[:j] + (l,) + I[j + 1:]
                s, srt = sort_sign(repl)
                if s == 0:
                    continue
                out.append(o)
                ins.append(channel_of(n, srt))
                rows.append(l)
                cols.append(I[j])
                sg.append(s)
    S = _sign_matrix(len(out), out, sg, n_channels(n, k))
    return SlotTable(np.array(ins, dtype=int), np.array(rows, dtype=int),
                     np.array(cols, dtype=int), S)


@lru_cache(maxsize=None)
def adjoint_slot_table(n: int, k: int) -> SlotTable:
    """Slot term of the L2-adjoint: sum_j sum_m theta_{I[j->m]} d_m b^{i_j}."""
    out, ins, rows, cols, sg = [], [], [], [], []
    for o, I in enumerate(basis(n, k)):
        for j in range(k):
            for m in range(n):
                repl = I[:j] + (m,) + I[j + 1:]
                s, srt = sort_sign(repl)
                if s == 0:
                    continue
                out.append(o)
                ins.append(channel_of(n, srt))
                rows.append(I[j])
                cols.append(m)
                sg.append(s)
    S = _sign_matrix(len(out), out, sg, n_channels(n, k))
    return SlotTable(np.array(ins, dtype=int), np.array(rows, dtype=int),
                     np.array(cols, dtype=int), S)


@dataclass(frozen=True)
class MinorTable:
    rows: np.ndarray  # (C, k) source index sets I
    cols: np.ndarray  # (C, k) target index sets J


@lru_cache(maxsize=None)
def minor_table(n: int, k: int) -> MinorTable:
    B = np.array(basis(n, k), dtype=int).reshape(n_channels(n, k), k)
    return MinorTable(B, B)
