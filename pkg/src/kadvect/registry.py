"""Named analytic field primitives, composable by sum and scalar multiple.

A field spec is a JSON-compatible mapping.  Primitives::

    {"name": "constant", "value": [...]}                     # per channel / component
    {"name": "linear", "matrix": [[...]], "offset": [...]}    # vector fields: A x + c
    {"name": "rotation", "omega": 1.0, "plane": [1, 2]}       # vector fields
    {"name": "radial_holder", "alpha": 0.5, "R": 10.0}        # vector fields
    {"name": "gaussian_bump", "center": [...], "width": 1.0, "value": [...]}
    {"name": "trig", "wavevector": [...], "phase": 0.0, "value": [...]}
    {"name": "random", "seed": 0, "terms": 3, "scale": 1.0}
    {"name": "tabulated", "lo": [...], "hi": [...], "values": nested list (..., C)}

Composites: ``{"sum": [spec, ...]}`` and ``{"scale": c, "field": spec}``.
For forms ``value`` lists one entry per channel (increasing multi-indices);
for vector fields one entry per component.
"""

from __future__ import annotations

import json
from importlib import resources
from typing import Any

import jax.numpy as jnp
import jsonschema
import numpy as np
from jax.scipy.ndimage import map_coordinates

from .counterexample import HolderDrift
from .exterior.fields import KFormField, VectorField
from .exterior.multiindex import n_channels
from .random_fields import random_form, random_vector_field

PRIMITIVES = ("constant", "linear", "rotation", "radial_holder", "gaussian_bump", "trig",
              "random", "tabulated")
VECTOR_ONLY = ("linear", "rotation", "radial_holder")


class FieldSpecError(ValueError):
    """Invalid or unknown field description."""


def field_schema() -> dict:
    return json.loads(resources.files("kadvect").joinpath("schemas/field.schema.json").read_text())


def _validate_schema(spec: Any):
    try:
        jsonschema.validate(spec, field_schema())
    except jsonschema.ValidationError as e:
        raise FieldSpecError(f"invalid field spec: {e.message}") from None


def _vec(spec, key, size, default=None) -> np.ndarray:
    if key not in spec:
        if default is None:
            raise FieldSpecError(f"{spec.get('name')!r} needs {key!r}")
        return np.asarray(default, dtype=float)
    v = np.atleast_1d(np.asarray(spec[key], dtype=float))
    if v.shape != (size,):
        raise FieldSpecError(f"{key!r} must have length {size}, got {v.shape}")
    return v


def _channel_fn(spec: dict, n: int, C: int):
    """Pointwise ``fn(t, x) -> (C,)`` for the shape-agnostic primitives."""
    name = spec["name"]
    if name == "constant":
        val = jnp.asarray(_vec(spec, "value", C))
        return lambda t, x: val + 0.0 * x[0]
    if name == "gaussian_bump":
        c = jnp.asarray(_vec(spec, "center", n, np.zeros(n)))
        w = float(spec.get("width", 1.0))
        val = jnp.asarray(_vec(spec, "value", C, np.ones(C)))
        return lambda t, x: val * jnp.exp(-jnp.sum((x - c) ** 2) / (2 * w * w))
    if name == "trig":
        kv = jnp.asarray(_vec(spec, "wavevector", n))
        ph = float(spec.get("phase", 0.0))
        val = jnp.asarray(_vec(spec, "value", C, np.ones(C)))
        return lambda t, x: val * jnp.sin(kv @ x + ph)
    if name == "tabulated":
        lo = _vec(spec, "lo", n)
        hi = _vec(spec, "hi", n)
        vals = np.asarray(spec["values"], dtype=float)
        if vals.ndim != n + 1 or vals.shape[-1] != C:
            raise FieldSpecError(f"tabulated values must have shape (m_1, ..., m_{n}, {C})")
        if np.any(np.asarray(vals.shape[:-1]) < 2) or np.any(hi <= lo):
            raise FieldSpecError("tabulated grid needs at least 2 samples per axis and hi > lo")
        scale = jnp.asarray((np.asarray(vals.shape[:-1]) - 1) / (hi - lo))
        lo_j = jnp.asarray(lo)
        V = jnp.asarray(vals)

        def fn(t, x):
            idx = (x - lo_j) * scale
            return jnp.stack([map_coordinates(V[..., c], list(idx), order=1, mode="nearest")
                              for c in range(C)])

        return fn
    raise FieldSpecError(f"primitive {name!r} is not available here")


def _compose(spec: dict, build):
    if "sum" in spec:
        parts = [build(s) for s in spec["sum"]]
        if not parts:
            raise FieldSpecError("empty sum")
        out = parts[0]
        for p in parts[1:]:
            out = out + p
        return out
    if "field" in spec:
        return build(spec["field"]) * float(spec["scale"])
    return None


def build_vector_field(spec: dict, n: int) -> VectorField:
    """A :class:`VectorField` on R^n from a field spec."""
    _validate_schema(spec)

    def build(s):
        comp = _compose(s, build)
        if comp is not None:
            return comp
        name = s["name"]
        if name == "linear":
            A = np.asarray(s["matrix"], dtype=float)
            if A.shape != (n, n):
                raise FieldSpecError(f"matrix must be {n}x{n}")
            return VectorField.linear(A, _vec(s, "offset", n, np.zeros(n)))
        if name == "rotation":
            if n < 2:
                raise FieldSpecError("rotation needs n >= 2")
            i, j = (int(p) - 1 for p in s.get("plane", [1, 2]))
            if not (0 <= i < n and 0 <= j < n and i != j):
                raise FieldSpecError("rotation plane must name two distinct axes")
            A = np.zeros((n, n))
            om = float(s.get("omega", 1.0))
            A[i, j], A[j, i] = -om, om
            return VectorField.linear(A)
        if name == "radial_holder":
            try:
                return HolderDrift(float(s["alpha"]), float(s.get("R", 10.0)), n).field()
            except ValueError as e:
                raise FieldSpecError(str(e)) from None
        if name == "random":
            rng = np.random.default_rng(int(s.get("seed", 0)))
            return random_vector_field(rng, n, terms=int(s.get("terms", 3)),
                                       scale=float(s.get("scale", 1.0)))
        return VectorField(n, _channel_fn(s, n, n))

    out = build(spec)
    out.spec = spec
    return out


def build_form(spec: dict, n: int, k: int) -> KFormField:
    """A :class:`KFormField` of degree ``k`` on R^n from a field spec."""
    _validate_schema(spec)
    if not 0 <= k <= n:
        raise FieldSpecError(f"degree k = {k} must satisfy 0 <= k <= n = {n}")
    C = n_channels(n, k)

    def build(s):
        comp = _compose(s, build)
        if comp is not None:
            return comp
        name = s["name"]
        if name in VECTOR_ONLY:
            raise FieldSpecError(f"{name!r} describes vector fields, not forms")
        if name == "random":
            rng = np.random.default_rng(int(s.get("seed", 0)))
            return random_form(rng, n, k, terms=int(s.get("terms", 3))) * float(s.get("scale", 1.0))
        return KFormField(n, k, _channel_fn(s, n, C))

    out = build(spec)
    out.spec = spec
    return out


def referenced_primitives(spec: Any) -> list[str]:
    """Names of all primitives used in a (possibly composite) spec."""
    if not isinstance(spec, dict):
        return []
    if "sum" in spec:
        return [p for s in spec["sum"] for p in referenced_primitives(s)]
    if "field" in spec:
        return referenced_primitives(spec["field"])
    return [spec["name"]] if "name" in spec else []
