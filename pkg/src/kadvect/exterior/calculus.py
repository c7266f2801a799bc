"""Differential operators on forms: d, Lie derivative and its L2-adjoint, pushforward, pullback.

Sign conventions.  For a k-form K with coefficients on increasing multi-indices

    (L_b K)_I = b^l d_l K_I + sum_j K_{I[j -> l]} d_{i_j} b^l,

and the adjoint is the true L2-adjoint, <<L_b K, theta>> = <<K, L_b^T theta>>
for compactly supported theta:

    (L_b^T theta)_I = -d_l(b^l theta_I) + sum_j sum_m theta_{I[j -> m]} d_m b^{i_j}.

For k = 0 this is -div(b theta); for constant b it is -b . grad theta.
"""

from __future__ import annotations

import jax.numpy as jnp
import numpy as np

from . import multiindex as mi
from .algebra import _xp, transform_values
from .fields import DiffeoMap, DimensionError, KFormField, VectorField


# array kernels -------------------------------------------------------------
def d_values(grad, n: int, k: int):
    """Exterior derivative from the channel gradient ``grad[..., I, m] = d_m K_I``."""
    T = mi.d_table(n, k)
    return grad[..., T.in_idx, T.dir_idx] @ T.S


def lie_values(K, grad, b, Db, n: int, k: int):
    xp = _xp(K, grad, b, Db)
    out = xp.einsum("...cl,...l->...c", grad, b)
    if k > 0:
        T = mi.lie_slot_table(n, k)
        out = out + (K[..., T.in_idx] * Db[..., T.row, T.col]) @ T.S
    return out


def lie_adjoint_values(theta, grad, b, Db, n: int, k: int):
    xp = _xp(theta, grad, b, Db)
    div = xp.trace(Db, axis1=-2, axis2=-1)
    out = -(div[..., None] * theta + xp.einsum("...cl,...l->...c", grad, b))
    if k > 0:
        T = mi.adjoint_slot_table(n, k)
        out = out + (theta[..., T.in_idx] * Db[..., T.row, T.col]) @ T.S
    return out


# field-level ---------------------------------------------------------------
def exterior_derivative(alpha: KFormField) -> KFormField:
    n, k = alpha.n, alpha.k
    if k >= n:
        raise DimensionError(f"d of an {k}-form on R^{n} is not defined here (k = n)")
    G = alpha.jac_fn
    return alpha.with_fn(lambda t, x: d_values(G(t, x), n, k), k=k + 1,
                         label=f"d({alpha.label})")


def lie_derivative(b: VectorField, K: KFormField) -> KFormField:
    if b.n != K.n:
        raise DimensionError("dimension mismatch")
    n, k = K.n, K.k
    f, G, bf, Db = K.fn, K.jac_fn, b.fn, b.jac_fn
    return K.with_fn(lambda t, x: lie_values(f(t, x), G(t, x), bf(t, x), Db(t, x), n, k),
                     label=f"L_b({K.label})")


def lie_derivative_adjoint(b: VectorField, theta: KFormField) -> KFormField:
    if b.n != theta.n:
        raise DimensionError("dimension mismatch")
    n, k = theta.n, theta.k
    f, G, bf, Db = theta.fn, theta.jac_fn, b.fn, b.jac_fn
    return theta.with_fn(
        lambda t, x: lie_adjoint_values(f(t, x), G(t, x), bf(t, x), Db(t, x), n, k),
        label=f"L_b^T({theta.label})")


def pushforward(flow_map: DiffeoMap, K: KFormField) -> KFormField:
    """``(phi_* K)_J(x) = K_I(psi(x)) det Dpsi(x)[I, J]`` with ``psi = phi^{-1}``."""
    if flow_map.n != K.n:
        raise DimensionError("dimension mismatch")
    n, k, f, psi, Dpsi = K.n, K.k, K.fn, flow_map.inverse, flow_map.inverse_jac
    return K.with_fn(lambda t, x: transform_values(f(t, psi(x)), Dpsi(x), n, k),
                     label=f"push({K.label})")


def pullback(flow_map: DiffeoMap, K: KFormField) -> KFormField:
    """``(phi^* K)_J(x) = K_I(phi(x)) det Dphi(x)[I, J]``."""
    if flow_map.n != K.n:
        raise DimensionError("dimension mismatch")
    n, k, f, phi, Dphi = K.n, K.k, K.fn, flow_map.forward, flow_map.forward_jac
    return K.with_fn(lambda t, x: transform_values(f(t, phi(x)), Dphi(x), n, k),
                     label=f"pull({K.label})")


def divergence(b: VectorField) -> KFormField:
    Db = b.jac_fn
    return KFormField(b.n, 0, lambda t, x: jnp.reshape(jnp.trace(Db(t, x)), (1,)))


def curl3(v_fn, jac_fn):
    """Curl of a vector field on R^3 from its pointwise Jacobian."""

    def c(t, x):
        D = jac_fn(t, x)
        return jnp.stack([D[2, 1] - D[1, 2], D[0, 2] - D[2, 0], D[1, 0] - D[0, 1]])

    return c


def vector_to_two_form(B: np.ndarray):
    """R^3 vector B <-> 2-form B^1 dx2^dx3 + B^2 dx3^dx1 + B^3 dx1^dx2 (channels 12, 13, 23)."""
    xp = _xp(B)
    return xp.stack([B[..., 2], -B[..., 1], B[..., 0]], axis=-1)
