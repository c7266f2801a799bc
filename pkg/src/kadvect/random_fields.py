"""Seeded random smooth fields for property tests and identity suites.

Each channel is a short trigonometric sum ``sum_m a_m sin(w_m . x + p_m)``
plus a low-degree polynomial part, so every derivative is analytic.
"""

from __future__ import annotations

import jax.numpy as jnp
import numpy as np

from .exterior.fields import KFormField, TestForm, VectorField
from .exterior.multiindex import n_channels


def _trig_channels(rng: np.random.Generator, n: int, C: int, terms: int, freq: float,
                   poly: float, time_dependent: bool):
    A = rng.normal(size=(C, terms)) / np.sqrt(terms)
    W = rng.normal(scale=freq, size=(C, terms, n))
    P = rng.uniform(0, 2 * np.pi, size=(C, terms))
    L = rng.normal(scale=poly, size=(C, n))
    c0 = rng.normal(scale=poly, size=C)
    om = rng.normal(size=(C, terms)) if time_dependent else np.zeros((C, terms))

    def fn(t, x):
        phase = jnp.einsum("ctn,n->ct", W, x) + P + om * t
        return jnp.sum(A * jnp.sin(phase), axis=1) + L @ x + c0

    return fn


def random_form(rng: np.random.Generator, n: int, k: int, *, terms: int = 3, freq: float = 1.0,
                poly: float = 0.3, time_dependent: bool = False, **kw) -> KFormField:
    fn = _trig_channels(rng, n, n_channels(n, k), terms, freq, poly, time_dependent)
    return KFormField(n, k, fn, label="random", **kw)


def random_vector_field(rng: np.random.Generator, n: int, *, terms: int = 3, freq: float = 1.0,
                        poly: float = 0.3, scale: float = 1.0, time_dependent: bool = False,
                        **kw) -> VectorField:
    fn0 = _trig_channels(rng, n, n, terms, freq, poly, time_dependent)
    return VectorField(n, lambda t, x: scale * fn0(t, x), **kw)


def random_test_form(rng: np.random.Generator, n: int, k: int, radius: float = 1.0,
                     **kw) -> TestForm:
    return TestForm(random_form(rng, n, k, **kw), radius)
