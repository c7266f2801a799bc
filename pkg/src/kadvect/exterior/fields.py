"""Field types: k-forms and vector fields as closures over (t, x).

A field wraps a pointwise function ``fn(t, x) -> array`` written with
``jax.numpy`` so that it can be differentiated by forward-mode AD (the
"analytic" derivative mode) or by second-order central differences with step
``h`` (the "fd" mode).  Vectorised evaluation over point clouds goes through
``jax.vmap``.  Evaluation is eager unless the caller asks for a compiled
evaluator (``jit=True``), which the time steppers do; the choice never depends
on call history, so repeated runs are bit-identical.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np

from .multiindex import MultiIndex, basis, channel_of, n_channels

jax.config.update("jax_enable_x64", True)

DERIVATIVE_MODES = ("analytic", "fd")
MAX_DIMENSION = 4

PointFn = Callable[[jax.Array, jax.Array], jax.Array]


class DimensionError(ValueError):
    """Raised when fields of different ambient dimension or degree are mixed."""


class _Evaluator:
    """Batched evaluation of a pointwise function over points of shape (M, n)."""

    def __init__(self, fn: PointFn):
        self._vm = jax.vmap(fn, in_axes=(None, 0))
        self._jit = None
        self._lock = threading.Lock()

    def __call__(self, t, X: np.ndarray, jit: bool = False) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        tt = jnp.asarray(float(t))
        if jit:
            with self._lock:
                if self._jit is None:
                    self._jit = jax.jit(self._vm)
            return np.asarray(self._jit(tt, X))
        return np.asarray(self._vm(tt, jnp.asarray(X)))


def fd_jacobian(fn: PointFn, h: float) -> PointFn:
    """Central-difference Jacobian ``J[..., m] = d_m fn`` (traceable)."""

    def jac(t, x):
        n = x.shape[0]
        eye = jnp.eye(n, dtype=x.dtype) * h
        cols = [(fn(t, x + eye[m]) - fn(t, x - eye[m])) / (2.0 * h) for m in range(n)]
        return jnp.stack(cols, axis=-1)

    return jac


def derivative_of(fn: PointFn, mode: str, h: float) -> PointFn:
    if mode == "analytic":
        return jax.jacfwd(fn, argnums=1)
    if mode == "fd":
        return fd_jacobian(fn, h)
    raise ValueError(f"unknown derivative mode {mode!r}; expected one of {DERIVATIVE_MODES}")


def _batched(evaluator: _Evaluator, x, t, n: int, tail: tuple[int, ...],
             jit: bool = False) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != n:
        raise DimensionError(f"points have trailing dimension {x.shape[-1]}, expected {n}")
    lead = x.shape[:-1]
    out = evaluator(t, x.reshape(-1, n), jit)
    return out.reshape(lead + tail)


def _time_derivative(fn: PointFn) -> PointFn:
    return jax.jacfwd(fn, argnums=0)


class KFormField:
    """A degree-k differential form on R^n stored on increasing multi-indices.

    ``fn(t, x)`` returns the ``C(n, k)`` coefficient channels at a single point.
    """

    def __init__(self, n: int, k: int, fn: PointFn, *, derivative_mode: str = "analytic",
                 h: float = 1e-4, label: str = "", spec: dict | None = None,
                 allow_large_n: bool = False):
        if n < 1:
            raise DimensionError("dimension must be positive")
        if n > MAX_DIMENSION and not allow_large_n:
            raise DimensionError(f"n = {n} exceeds the default cap {MAX_DIMENSION}")
        if not 0 <= k <= n:
            raise DimensionError(f"degree {k} not in 0..{n}")
        if derivative_mode not in DERIVATIVE_MODES:
            raise ValueError(f"unknown derivative mode {derivative_mode!r}")
        self.n = n
        self.k = k
        self.fn = fn
        self.derivative_mode = derivative_mode
        self.h = float(h)
        self.label = label
        self.spec = spec
        self._eval = _Evaluator(fn)
        self._jac_fn = None
        self._jac_eval = None

    @property
    def n_channels(self) -> int:
        return n_channels(self.n, self.k)

    @property
    def multi_indices(self) -> list[MultiIndex]:
        return [MultiIndex(tuple(i + 1 for i in c), self.n) for c in basis(self.n, self.k)]

    def with_fn(self, fn: PointFn, k: int | None = None, label: str = "") -> "KFormField":
        """New form sharing this field's derivative settings."""
        return KFormField(self.n, self.k if k is None else k, fn,
                          derivative_mode=self.derivative_mode, h=self.h, label=label,
                          allow_large_n=True)

    # evaluation -------------------------------------------------------
    def __call__(self, x, t: float = 0.0, jit: bool = False) -> np.ndarray:
        return _batched(self._eval, x, t, self.n, (self.n_channels,), jit)

    def evaluate(self, t: float, x) -> np.ndarray:
        return self(x, t)

    @property
    def jac_fn(self) -> PointFn:
        """Pointwise derivative ``(t, x) -> (C, n)`` with ``[I, m] = d_m K_I``."""
        if self._jac_fn is None:
            self._jac_fn = derivative_of(self.fn, self.derivative_mode, self.h)
        return self._jac_fn

    def jacobian(self, x, t: float = 0.0, jit: bool = False) -> np.ndarray:
        if self._jac_eval is None:
            self._jac_eval = _Evaluator(self.jac_fn)
        return _batched(self._jac_eval, x, t, self.n, (self.n_channels, self.n), jit)

    def time_derivative(self) -> "KFormField":
        return self.with_fn(_time_derivative(self.fn), label=f"d/dt {self.label}")

    def channel(self, index: MultiIndex | tuple[int, ...]) -> Callable:
        """Scalar callable ``(x, t) -> values`` for one coefficient channel."""
        if not isinstance(index, MultiIndex):
            index = MultiIndex(tuple(index), self.n)
        if index.n != self.n or index.k != self.k:
            raise DimensionError(f"{index} is not a channel of a {self.k}-form on R^{self.n}")
        c = index.position
        return lambda x, t=0.0: self(x, t)[..., c]

    # linear structure -------------------------------------------------
    def _check_same(self, other: "KFormField"):
        if not isinstance(other, KFormField) or other.n != self.n or other.k != self.k:
            raise DimensionError("forms must share dimension and degree")

    def __add__(self, other: "KFormField") -> "KFormField":
        self._check_same(other)
        f, g = self.fn, other.fn
        return self.with_fn(lambda t, x: f(t, x) + g(t, x))

    def __sub__(self, other: "KFormField") -> "KFormField":
        self._check_same(other)
        f, g = self.fn, other.fn
        return self.with_fn(lambda t, x: f(t, x) - g(t, x))

    def __neg__(self) -> "KFormField":
        f = self.fn
        return self.with_fn(lambda t, x: -f(t, x))

    def __mul__(self, c) -> "KFormField":
        f = self.fn
        if callable(c):
            return self.with_fn(lambda t, x: c(t, x) * f(t, x))
        c = float(c)
        return self.with_fn(lambda t, x: c * f(t, x))

    __rmul__ = __mul__

    def __repr__(self) -> str:
        tag = f" {self.label!r}" if self.label else ""
        return f"KFormField(n={self.n}, k={self.k}{tag})"

    # constructors -----------------------------------------------------
    @classmethod
    def zero(cls, n: int, k: int, **kw) -> "KFormField":
        C = n_channels(n, k)
        return cls(n, k, lambda t, x: jnp.zeros(C, dtype=x.dtype), **kw)

    @classmethod
    def constant(cls, n: int, k: int, values, **kw) -> "KFormField":
        v = np.broadcast_to(np.asarray(values, dtype=float), (n_channels(n, k),)).copy()
        return cls(n, k, lambda t, x: jnp.asarray(v) + 0.0 * x[0], **kw)

    @classmethod
    def basis_form(cls, n: int, indices: tuple[int, ...], **kw) -> "KFormField":
        """``dx^{i1} ^ ... ^ dx^{ik}`` for 1-based increasing ``indices``."""
        mi = MultiIndex(tuple(indices), n)
        v = np.zeros(n_channels(n, mi.k))
        v[mi.position] = 1.0
        return cls.constant(n, mi.k, v, **kw)

    @classmethod
    def from_channels(cls, n: int, k: int, channels: dict, **kw) -> "KFormField":
        """Build from ``{MultiIndex or 1-based tuple: scalar fn(t, x)}``; missing channels are 0."""
        C = n_channels(n, k)
        slots: list = [None] * C
        for key, f in channels.items():
            idx = key.indices if isinstance(key, MultiIndex) else tuple(key)
            slots[channel_of(n, tuple(i - 1 for i in idx))] = f

        def fn(t, x):
            return jnp.stack([s(t, x) if s is not None else 0.0 * x[0] for s in slots])

        return cls(n, k, fn, **kw)

    @classmethod
    def scalar(cls, n: int, f: PointFn, **kw) -> "KFormField":
        return cls(n, 0, lambda t, x: jnp.reshape(f(t, x), (1,)), **kw)

    @classmethod
    def density(cls, n: int, f: PointFn, **kw) -> "KFormField":
        return cls(n, n, lambda t, x: jnp.reshape(f(t, x), (1,)), **kw)


class KVectorField(KFormField):
    """Contravariant k-vector field; same channel storage as a k-form."""

    def __repr__(self) -> str:
        return f"KVectorField(n={self.n}, k={self.k})"


@dataclass(frozen=True)
class FieldMeta:
    holder_alpha: float | None = None
    cutoff_R: float | None = None
    label: str = ""


class VectorField:
    """Vector field ``b(t, x)`` on R^n with optional analytic Jacobian.

    ``jacobian_fn(t, x)`` returns ``D[i, j] = d_j b^i``.
    """

    def __init__(self, n: int, fn: PointFn, jacobian_fn: PointFn | None = None, *,
                 derivative_mode: str = "analytic", h: float = 1e-4,
                 meta: FieldMeta | None = None, spec: dict | None = None):
        if n < 1:
            raise DimensionError("dimension must be positive")
        if derivative_mode not in DERIVATIVE_MODES:
            raise ValueError(f"unknown derivative mode {derivative_mode!r}")
        self.n = n
        self.fn = fn
        self.has_analytic_jacobian = jacobian_fn is not None
        self.derivative_mode = derivative_mode
        self.h = float(h)
        self.meta = meta or FieldMeta()
        self.spec = spec
        self.jac_fn = jacobian_fn if jacobian_fn is not None else derivative_of(fn, derivative_mode, h)
        self._hess_fn = None
        self._eval = _Evaluator(fn)
        self._jac_eval = _Evaluator(self.jac_fn)
        self._both_eval = None
        self._hess_eval = None

    @property
    def label(self) -> str:
        return self.meta.label

    @property
    def hess_fn(self) -> PointFn:
        """``H[i, j, m] = d_m d_j b^i``."""
        if self._hess_fn is None:
            self._hess_fn = derivative_of(self.jac_fn, self.derivative_mode, self.h)
        return self._hess_fn

    def __call__(self, x, t: float = 0.0, jit: bool = False) -> np.ndarray:
        return _batched(self._eval, x, t, self.n, (self.n,), jit)

    def jacobian(self, x, t: float = 0.0, jit: bool = False) -> np.ndarray:
        return _batched(self._jac_eval, x, t, self.n, (self.n, self.n), jit)

    def value_and_jacobian(self, x, t: float = 0.0,
                           jit: bool = False) -> tuple[np.ndarray, np.ndarray]:
        if self._both_eval is None:
            f, J, n = self.fn, self.jac_fn, self.n
            self._both_eval = _Evaluator(
                lambda t, x: jnp.concatenate([f(t, x), J(t, x).reshape(-1)]))
        out = _batched(self._both_eval, x, t, self.n, (self.n + self.n * self.n,), jit)
        return out[..., : self.n], out[..., self.n:].reshape(out.shape[:-1] + (self.n, self.n))

    def hessian(self, x, t: float = 0.0, jit: bool = False) -> np.ndarray:
        if self._hess_eval is None:
            self._hess_eval = _Evaluator(self.hess_fn)
        return _batched(self._hess_eval, x, t, self.n, (self.n, self.n, self.n), jit)

    def divergence_fn(self) -> PointFn:
        J = self.jac_fn
        return lambda t, x: jnp.trace(J(t, x))

    def check_jacobian(self, points, h: float = 1e-5, t: float = 0.0) -> float:
        """Max deviation between the Jacobian and central differences of the components."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        J = self.jacobian(pts, t)
        fd = np.empty_like(J)
        for m in range(self.n):
            e = np.zeros(self.n)
            e[m] = h
            fd[..., m] = (self(pts + e, t) - self(pts - e, t)) / (2 * h)
        return float(np.max(np.abs(J - fd)))

    def _combine(self, other: "VectorField", a: float, b: float) -> "VectorField":
        if other.n != self.n:
            raise DimensionError("vector fields must share dimension")
        f, g, Jf, Jg = self.fn, other.fn, self.jac_fn, other.jac_fn
        return VectorField(self.n, lambda t, x: a * f(t, x) + b * g(t, x),
                           lambda t, x: a * Jf(t, x) + b * Jg(t, x),
                           derivative_mode=self.derivative_mode, h=self.h)

    def __add__(self, other: "VectorField") -> "VectorField":
        return self._combine(other, 1.0, 1.0)

    def __sub__(self, other: "VectorField") -> "VectorField":
        return self._combine(other, 1.0, -1.0)

    def __mul__(self, c: float) -> "VectorField":
        c = float(c)
        f, J = self.fn, self.jac_fn
        return VectorField(self.n, lambda t, x: c * f(t, x), lambda t, x: c * J(t, x),
                           derivative_mode=self.derivative_mode, h=self.h, meta=self.meta)

    __rmul__ = __mul__

    def __neg__(self) -> "VectorField":
        return self * -1.0

    def __repr__(self) -> str:
        tag = f" {self.meta.label!r}" if self.meta.label else ""
        return f"VectorField(n={self.n}{tag})"

    @classmethod
    def constant(cls, c, **kw) -> "VectorField":
        c = np.asarray(c, dtype=float)
        n = c.shape[0]
        return cls(n, lambda t, x: jnp.asarray(c) + 0.0 * x,
                   lambda t, x: jnp.zeros((n, n), dtype=x.dtype), **kw)

    @classmethod
    def linear(cls, A, c=None, **kw) -> "VectorField":
        """``b(x) = A x + c``."""
        A = np.asarray(A, dtype=float)
        n = A.shape[0]
        c = np.zeros(n) if c is None else np.asarray(c, dtype=float)
        return cls(n, lambda t, x: jnp.asarray(A) @ x + jnp.asarray(c),
                   lambda t, x: jnp.asarray(A) + 0.0 * x[0], **kw)

    @classmethod
    def zero(cls, n: int) -> "VectorField":
        return cls.constant(np.zeros(n))


def _bump_profile(r2):
    """exp(1 - 1/(1 - r^2)) on the unit ball, 0 outside; smooth and AD-safe."""
    inside = r2 < 1.0
    safe = jnp.where(inside, r2, 0.0)
    return jnp.where(inside, jnp.exp(1.0 - 1.0 / (1.0 - safe)), 0.0)


class TestForm(KFormField):
    """Compactly supported smooth form: ``bump(|x - c| / R) * base(t, x)``."""

    __test__ = False  # not a pytest class

    def __init__(self, base: KFormField, support_radius: float, center=None):
        if support_radius <= 0:
            raise ValueError("support radius must be positive")
        c = np.zeros(base.n) if center is None else np.asarray(center, dtype=float)
        R = float(support_radius)
        g = base.fn

        def fn(t, x):
            r2 = jnp.sum((x - c) ** 2) / R**2
            return _bump_profile(r2) * g(t, x)

        super().__init__(base.n, base.k, fn, derivative_mode=base.derivative_mode, h=base.h,
                         label=f"bump({base.label})", allow_large_n=True)
        self.base = base
        self.support_radius = R
        self.center = c

    def box(self, margin: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        r = self.support_radius + margin
        return self.center - r, self.center + r


@dataclass
class QuadratureGrid:
    """Tensor-product quadrature on an axis-aligned box.

    ``rule`` is ``"gauss-legendre"`` (composite over ``panels`` per axis) or
    ``"midpoint"``.
    """

    lo: np.ndarray
    hi: np.ndarray
    points_per_axis: int
    rule: str = "gauss-legendre"
    panels: int = 1
    nodes: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if self.lo.shape != self.hi.shape or np.any(self.hi <= self.lo):
            raise ValueError("box must satisfy lo < hi componentwise")
        if self.points_per_axis < 2:
            raise ValueError("points_per_axis must be at least 2")
        if self.points_per_axis % self.panels:
            raise ValueError("points_per_axis must be a multiple of panels")
        x1, w1 = zip(*(self._axis(a, b) for a, b in zip(self.lo, self.hi)))
        mesh = np.meshgrid(*x1, indexing="ij")
        self.nodes = np.stack([m.reshape(-1) for m in mesh], axis=-1)
        wm = np.meshgrid(*w1, indexing="ij")
        self.weights = np.prod(np.stack([m.reshape(-1) for m in wm]), axis=0)

    def _axis(self, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
        m = self.points_per_axis // self.panels
        edges = np.linspace(a, b, self.panels + 1)
        if self.rule == "midpoint":
            u = (np.arange(m) + 0.5) / m
            w = np.full(m, 1.0 / m)
        elif self.rule == "gauss-legendre":
            g, gw = np.polynomial.legendre.leggauss(m)
            u = 0.5 * (g + 1.0)
            w = 0.5 * gw
        else:
            raise ValueError(f"unknown quadrature rule {self.rule!r}")
        xs = np.concatenate([e0 + (e1 - e0) * u for e0, e1 in zip(edges[:-1], edges[1:])])
        ws = np.concatenate([(e1 - e0) * w for e0, e1 in zip(edges[:-1], edges[1:])])
        return xs, ws

    @property
    def n(self) -> int:
        return self.lo.shape[0]

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def refine(self, factor: int = 2) -> "QuadratureGrid":
        return QuadratureGrid(self.lo, self.hi, self.points_per_axis * factor, self.rule, self.panels)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Quadrature over the first axis of ``values`` (node axis last-but-channel aware)."""
        return np.tensordot(self.weights, values, axes=(0, 0))

    def contains_ball(self, center, radius: float) -> bool:
        c = np.asarray(center, dtype=float)
        return bool(np.all(c - radius >= self.lo - 1e-12) and np.all(c + radius <= self.hi + 1e-12))

    @classmethod
    def cube(cls, n: int, half_width: float, points_per_axis: int, center=None, **kw):
        c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
        return cls(c - half_width, c + half_width, points_per_axis, **kw)


class DiffeoMap:
    """A diffeomorphism of R^n with its inverse, both traceable pointwise maps.

    Jacobians default to forward-mode AD of the maps.
    """

    def __init__(self, n: int, forward: PointFn, inverse: PointFn,
                 forward_jac: PointFn | None = None, inverse_jac: PointFn | None = None):
        self.n = n
        self.forward = forward
        self.inverse = inverse
        self.forward_jac = forward_jac or jax.jacfwd(forward)
        self.inverse_jac = inverse_jac or jax.jacfwd(inverse)

    def compose(self, other: "DiffeoMap") -> "DiffeoMap":
        """``self o other``."""
        f, g, fi, gi = self.forward, other.forward, self.inverse, other.inverse
        return DiffeoMap(self.n, lambda x: f(g(x)), lambda x: gi(fi(x)))

    @classmethod
    def affine(cls, A, c=None) -> "DiffeoMap":
        A = np.asarray(A, dtype=float)
        n = A.shape[0]
        c = np.zeros(n) if c is None else np.asarray(c, dtype=float)
        Ai = np.linalg.inv(A)
        return cls(n, lambda x: jnp.asarray(A) @ x + jnp.asarray(c),
                   lambda x: jnp.asarray(Ai) @ (x - jnp.asarray(c)),
                   lambda x: jnp.asarray(A) + 0.0 * x[0],
                   lambda x: jnp.asarray(Ai) + 0.0 * x[0])

    @classmethod
    def identity(cls, n: int) -> "DiffeoMap":
        return cls.affine(np.eye(n))
