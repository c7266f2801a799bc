"""Independent symbolic oracle for coordinate exterior calculus.

Forms are dicts ``{full index tuple: sympy expr}`` over *all* ordered index
tuples (fully antisymmetric components), so no sign table or increasing
multi-index bookkeeping from the library is reused.  Library fields are
built from the same expressions via ``lambdify``.
"""

from __future__ import annotations

import itertools
from math import factorial

import jax.numpy as jnp
import numpy as np
import sympy as sp

from kadvect.exterior import KFormField, VectorField

JNP = [{"sin": jnp.sin, "cos": jnp.cos, "exp": jnp.exp}, jnp]


def coords(n):
    return sp.symbols(f"x1:{n + 1}", real=True)


def perm_sign(p) -> int:
    p = list(p)
    s = 1
    for i in range(len(p)):
        for j in range(i + 1, len(p)):
            if p[i] > p[j]:
                s = -s
    return s


def levi_civita(idx) -> int:
    return 0 if len(set(idx)) < len(idx) else perm_sign(idx)


def full_form(n, k, comps: dict):
    """Antisymmetric extension of ``{increasing 0-based tuple: expr}``."""
    out = {}
    for idx in itertools.product(range(n), repeat=k):
        if len(set(idx)) < k:
            out[idx] = sp.Integer(0)
            continue
        srt = tuple(sorted(idx))
        out[idx] = perm_sign([sorted(idx).index(i) for i in idx]) * comps.get(srt, sp.Integer(0))
    return out


def increasing(n, k, form: dict) -> list:
    return [form[c] for c in itertools.combinations(range(n), k)]


def wedge(n, j, k, a: dict, b: dict) -> dict:
    out = {}
    for idx in itertools.product(range(n), repeat=j + k):
        s = sp.Integer(0)
        for p in itertools.permutations(range(j + k)):
            q = [idx[i] for i in p]
            s += perm_sign(p) * a[tuple(q[:j])] * b[tuple(q[j:])]
        out[idx] = sp.expand(s / (factorial(j) * factorial(k)))
    return out


def d(n, k, w: dict, x) -> dict:
    out = {}
    for idx in itertools.product(range(n), repeat=k + 1):
        s = sp.Integer(0)
        for j in range(k + 1):
            rest = idx[:j] + idx[j + 1:]
            s += (-1) ** j * sp.diff(w[rest], x[idx[j]])
        out[idx] = s
    return out


def contract(n, k, X, w: dict) -> dict:
    return {idx: sum(X[i] * w[(i,) + idx] for i in range(n))
            for idx in itertools.product(range(n), repeat=k - 1)}


def lie(n, k, X, w: dict, x) -> dict:
    """Cartan: ``L_X w = d i_X w + i_X d w``."""
    a = d(n, k - 1, contract(n, k, X, w), x) if k > 0 else \
        {idx: sp.Integer(0) for idx in itertools.product(range(n), repeat=k)}
    b = contract(n, k + 1, X, d(n, k, w, x)) if k < n else \
        {idx: sp.Integer(0) for idx in itertools.product(range(n), repeat=k)}
    return {idx: a[idx] + b[idx] for idx in a}


def hodge(n, k, w: dict) -> dict:
    out = {}
    for J in itertools.product(range(n), repeat=n - k):
        s = sp.Integer(0)
        for I in itertools.product(range(n), repeat=k):
            e = levi_civita(I + J)
            if e:
                s += e * w[I]
        out[J] = s / factorial(k)
    return out


def to_field(n, k, exprs: list, x) -> KFormField:
    f = sp.lambdify([x], exprs, modules=JNP)
    return KFormField(n, k, lambda t, y: jnp.stack([jnp.asarray(v, dtype=y.dtype) + 0.0 * y[0]
                                                    for v in f(list(y))]))


def to_vector(n, exprs: list, x) -> VectorField:
    f = sp.lambdify([x], exprs, modules=JNP)
    return VectorField(n, lambda t, y: jnp.stack([jnp.asarray(v, dtype=y.dtype) + 0.0 * y[0]
                                                  for v in f(list(y))]))


def evaluate(exprs: list, x, pts: np.ndarray) -> np.ndarray:
    f = sp.lambdify([x], exprs, modules="numpy")
    return np.array([np.broadcast_to(np.asarray(f(list(p)), dtype=float), (len(exprs),))
                     for p in pts])


def random_poly(rng, x, degree=2, terms=4):
    e = sp.Integer(0)
    for _ in range(terms):
        powers = rng.integers(0, degree + 1, size=len(x))
        c = sp.Rational(int(rng.integers(-5, 6)), int(rng.integers(1, 4)))
        e += c * sp.Mul(*[xi**int(p) for xi, p in zip(x, powers)])
    return e + sp.sin(sp.Rational(int(rng.integers(1, 3)), 2) * x[0])


def random_components(rng, n, k, x):
    return {c: random_poly(rng, x) for c in itertools.combinations(range(n), k)}
