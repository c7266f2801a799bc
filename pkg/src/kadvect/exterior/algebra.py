"""Pointwise form algebra: wedge, contraction, Hodge star, pairings, musical maps.

Each operation has an array kernel (``*_values``) acting on channel arrays of
shape ``(..., C)`` that works on numpy arrays and jax tracers alike, and a
field-level wrapper that composes closures.
"""

from __future__ import annotations

import jax.numpy as jnp
import numpy as np

from . import multiindex as mi
from .fields import DimensionError, KFormField, KVectorField, VectorField


def _xp(*arrays):
    return np if all(isinstance(a, np.ndarray) for a in arrays) else jnp


# array kernels -------------------------------------------------------------
def wedge_values(a, b, n: int, j: int, k: int):
    T = mi.wedge_table(n, j, k)
    return (a[..., T.a_idx] * b[..., T.b_idx]) @ T.S


def contract_values(X, a, n: int, k: int):
    if k < 1:
        raise DimensionError("cannot contract a 0-form")
    T = mi.contract_table(n, k)
    return (X[..., T.l_idx] * a[..., T.a_idx]) @ T.S


def hodge_values(a, n: int, k: int):
    T = mi.hodge_table(n, k)
    return a[..., T.perm] * T.signs


def hodge_inverse_values(a, n: int, k: int):
    """Inverse of the star acting on a k-form (output degree n - k)."""
    return hodge_values(a, n, k) * (-1.0) ** (k * (n - k))


def inner_values(F, K):
    return (F * K).sum(axis=-1)


def minors(M, n: int, k: int):
    """``Lambda^k M``: ``[..., I, J] = det M[I, J]`` over increasing index sets."""
    xp = _xp(M)
    lead = M.shape[:-2]
    if k == 0:
        return xp.ones(lead + (1, 1))
    T = mi.minor_table(n, k)
    sub = M[..., T.rows[:, None, :, None], T.cols[None, :, None, :]]
    if k == 1:
        return sub[..., 0, 0]
    return xp.linalg.det(sub)


def transform_values(K, M, n: int, k: int):
    """``out_J = sum_I K_I det M[I, J]`` (pushforward/pullback coefficient rule)."""
    xp = _xp(K, M)
    return xp.einsum("...i,...ij->...j", K, minors(M, n, k))


# field-level operations ----------------------------------------------------
def _check_n(*objs):
    ns = {o.n for o in objs}
    if len(ns) != 1:
        raise DimensionError(f"dimension mismatch: {sorted(ns)}")


def wedge(alpha: KFormField, beta: KFormField) -> KFormField:
    _check_n(alpha, beta)
    n, j, k = alpha.n, alpha.k, beta.k
    if j + k > n:
        raise DimensionError(f"degree overflow: {j} + {k} > {n}")
    f, g = alpha.fn, beta.fn
    return alpha.with_fn(lambda t, x: wedge_values(f(t, x), g(t, x), n, j, k), k=j + k,
                         label=f"{alpha.label}^{beta.label}")


def contract(X: VectorField, alpha: KFormField) -> KFormField:
    _check_n(X, alpha)
    if alpha.k < 1:
        raise DimensionError("cannot contract a 0-form")
    n, k, f, g = alpha.n, alpha.k, X.fn, alpha.fn
    return alpha.with_fn(lambda t, x: contract_values(f(t, x), g(t, x), n, k), k=k - 1)


def hodge_star(alpha: KFormField) -> KFormField:
    n, k, f = alpha.n, alpha.k, alpha.fn
    return alpha.with_fn(lambda t, x: hodge_values(f(t, x), n, k), k=n - k)


def hodge_inverse(beta: KFormField) -> KFormField:
    """Inverse star: maps an (n-k)-form back to a k-form."""
    n, m, f = beta.n, beta.k, beta.fn
    return beta.with_fn(lambda t, x: hodge_inverse_values(f(t, x), n, m), k=n - m)


def sharp(theta: KFormField) -> KVectorField:
    """Raise all indices; with the Euclidean metric this is a channel identity."""
    return KVectorField(theta.n, theta.k, theta.fn, derivative_mode=theta.derivative_mode,
                        h=theta.h, allow_large_n=True)


def flat(v: KFormField) -> KFormField:
    return KFormField(v.n, v.k, v.fn, derivative_mode=v.derivative_mode, h=v.h,
                      allow_large_n=True)


def inner_product_pointwise(F: KFormField, K: KFormField, t: float, x) -> np.ndarray:
    if F.n != K.n or F.k != K.k:
        raise DimensionError("pairing needs equal dimension and degree")
    return inner_values(F(x, t), K(x, t))


def pairing_field(F: KFormField, K: KFormField) -> KFormField:
    """The 0-form ``<F, K>_x``."""
    if F.n != K.n or F.k != K.k:
        raise DimensionError("pairing needs equal dimension and degree")
    f, g = F.fn, K.fn
    return F.with_fn(lambda t, x: jnp.reshape(inner_values(f(t, x), g(t, x)), (1,)), k=0)
