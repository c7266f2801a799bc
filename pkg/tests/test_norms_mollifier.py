"""Norms, Hoelder probes, weak derivatives, mollification and commutators."""

from math import gamma, pi

import jax.numpy as jnp
import numpy as np
import pytest
from scipy.integrate import quad

from kadvect.exterior import (KFormField, QuadratureGrid, TestForm, VectorField,
                              holder_seminorm_estimate, l2_pairing, lp_norm,
                              weak_derivative_check)
from kadvect.mollifier import (Mollifier, commutator_b, dirac_functional, double_commutator_xi,
                               epsilon_sweep, mollify, mollify_distributional,
                               mollify_vector_field, normalization_error)


def _second_moment(n: int) -> float:
    """``int rho(z) z_1^2 dz`` for the unit bump kernel, by radial quadrature."""
    prof = lambda r: np.exp(-1.0 / (1.0 - r * r)) if r < 1 else 0.0  # noqa: E731
    sphere = 2.0 if n == 1 else 2.0 * pi ** (n / 2) / gamma(n / 2)
    mass = sphere * quad(lambda r: r ** (n - 1) * prof(r), 0, 1, epsabs=1e-15)[0]
    m2 = sphere * quad(lambda r: r ** (n + 1) * prof(r), 0, 1, epsabs=1e-15)[0]
    return m2 / mass / n


# norms ----------------------------------------------------------------------------
@pytest.mark.parametrize("p", [1.0, 2.0, 3.5, np.inf])
def test_lp_norm_of_constant(p):
    grid = QuadratureGrid([0.0, 0.0], [2.0, 3.0], 8)
    K = KFormField.constant(2, 1, [3.0, 4.0])
    expect = 5.0 if np.isinf(p) else 5.0 * 6.0 ** (1 / p)
    assert lp_norm(K, p, grid) == pytest.approx(expect, rel=1e-12)


def test_lp_norm_rejects_small_p():
    with pytest.raises(ValueError):
        lp_norm(KFormField.zero(1, 0), 0.5, QuadratureGrid([0.0], [1.0], 4))


def test_holder_probe_of_linear_function_is_its_slope(rng):
    K = KFormField.scalar(2, lambda t, x: 1.7 * x[0])
    pairs = rng.uniform(-1, 1, size=(500, 2, 2))
    est = holder_seminorm_estimate(K, 1.0, pairs)
    assert est <= 1.7 + 1e-12
    assert est > 1.6


def test_holder_probe_of_square_root():
    K = KFormField.scalar(1, lambda t, x: jnp.sqrt(jnp.abs(x[0])))
    y = np.linspace(0.01, 1, 50)
    pairs = np.stack([np.zeros((50, 1)), y[:, None]], axis=1)
    assert holder_seminorm_estimate(K, 0.5, pairs) == pytest.approx(1.0, rel=1e-12)


def test_weak_derivative_of_abs_is_sign():
    grid = QuadratureGrid([-1.0], [1.0], 400, panels=40)
    K = KFormField.scalar(1, lambda t, x: jnp.abs(x[0]))
    sign = KFormField.scalar(1, lambda t, x: jnp.sign(x[0]))
    thetas = [TestForm(KFormField.constant(1, 0, 1.0), 0.5, center=[c]) for c in (-0.2, 0.0, 0.3)]
    assert weak_derivative_check(K, [sign], grid, thetas) < 1e-3
    wrong = KFormField.zero(1, 0)
    assert weak_derivative_check(K, [wrong], grid, thetas) > 1e-2


# mollification ------------------------------------------------------------------------
@pytest.mark.parametrize("n", [1, 2, 3])
def test_kernel_normalization(n):
    assert normalization_error(Mollifier(0.3, n)) < 1e-10


@pytest.mark.parametrize("n", [1, 2, 3])
def test_unit_rule_moment_identities(n):
    Z, W, G = Mollifier(0.1, n).unit_rule()
    assert W.sum() == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(W @ Z, 0.0, atol=1e-14)
    np.testing.assert_allclose(G.T @ Z, -np.eye(n), atol=1e-10)
    np.testing.assert_allclose(np.einsum("q,qi,qj->ij", W, Z, Z), _second_moment(n) * np.eye(n),
                               rtol=5e-3, atol=1e-12)


def test_mollify_preserves_affine_fields():
    m = Mollifier(0.2, 2)
    K = KFormField(2, 1, lambda t, x: jnp.stack([3.0 + 0.0 * x[0], 2 * x[0] - x[1]]))
    x = np.array([[0.3, -0.4], [1.0, 2.0]])
    np.testing.assert_allclose(mollify(K, m)(x), K(x), atol=1e-13)
    b = VectorField.linear([[1.0, 2.0], [0.0, -1.0]], [0.5, 0.5])
    mb = mollify_vector_field(b, m)
    np.testing.assert_allclose(mb(x), b(x), atol=1e-13)
    np.testing.assert_allclose(mb.jacobian(x), b.jacobian(x), atol=1e-13)


def test_mollified_step_is_half_at_jump():
    step = KFormField.scalar(1, lambda t, x: jnp.where(x[0] > 0, 1.0, 0.0))
    m = Mollifier(0.1, 1, 64)
    assert mollify(step, m)(np.zeros(1))[0] == pytest.approx(0.5, abs=1e-12)
    assert mollify(step, m)(np.array([0.2]))[0] == pytest.approx(1.0)


def test_dirac_functional_mollifies_to_kernel_pairing():
    theta = KFormField.scalar(2, lambda t, x: jnp.cos(x[0]) * x[1] ** 2)
    m = Mollifier(0.25, 2)
    x0 = np.array([0.1, 0.6])
    val = mollify_distributional(dirac_functional(x0), m, theta)
    assert val == pytest.approx(float(mollify(theta, m)(x0)[0]), rel=1e-12)
    # second-order accurate in epsilon
    assert abs(val - np.cos(0.1) * 0.36) < 0.25**2


# commutators ----------------------------------------------------------------------------
THETA = TestForm(KFormField.constant(2, 0, 1.0), 0.8)
GRID = QuadratureGrid.cube(2, 0.8, 24, panels=4)


def test_linear_drift_commutator_closed_form():
    """For b = A x and K = x_1^2 the commutator is the constant -2 A_11 eps^2 m_2."""
    A = np.array([[0.7, -0.3], [0.4, 0.2]])
    b = VectorField.linear(A)
    K = KFormField.scalar(2, lambda t, x: x[0] ** 2)
    bump_mass = l2_pairing(THETA, KFormField.constant(2, 0, 1.0), GRID.refine())
    for eps in (0.2, 0.1):
        ev = commutator_b(b, K, Mollifier(eps, 2), THETA, GRID)
        expect = -2 * A[0, 0] * eps**2 * _second_moment(2) * bump_mass
        assert ev.value == pytest.approx(expect, rel=2e-2)
        assert ev.split_value == pytest.approx(ev.value, rel=1e-3)


def test_constant_fields_give_zero_commutators():
    K = KFormField(2, 1, lambda t, x: jnp.stack([jnp.sin(x[0] * x[1]), x[0] ** 3]))
    m = Mollifier(0.1, 2)
    assert abs(commutator_b(VectorField.constant([0.4, -1.1]), K, m,
                            TestForm(KFormField.constant(2, 1, [1.0, 0.5]), 0.8), GRID).value) < 1e-12
    assert abs(double_commutator_xi(VectorField.constant([0.9, 0.2]), K, m,
                                    TestForm(KFormField.constant(2, 1, [1.0, 0.5]), 0.8),
                                    GRID).value) < 1e-12


def test_constant_form_commutes_with_nonconstant_drift_for_k0():
    """L_b of a constant 0-form vanishes, and so does its mollification."""
    b = VectorField(2, lambda t, x: jnp.stack([jnp.sin(x[1]), x[0] ** 2]))
    ev = commutator_b(b, KFormField.constant(2, 0, 2.0), Mollifier(0.1, 2), THETA, GRID)
    assert abs(ev.value) < 1e-12


def test_split_form_matches_direct_form():
    b = VectorField(2, lambda t, x: jnp.stack([jnp.sin(2 * x[1]), jnp.cos(x[0]) * x[1]]))
    K = KFormField(2, 1, lambda t, x: jnp.stack([jnp.exp(-x[0] ** 2), x[0] * x[1]]))
    theta = TestForm(KFormField.constant(2, 1, [1.0, -0.5]), 0.8)
    ev = commutator_b(b, K, Mollifier(0.1, 2), theta, GRID)
    assert abs(ev.split_value - ev.value) < 1e-2 * abs(ev.value) + 3 * ev.error_estimate


def test_epsilon_sweep_validates_scales():
    with pytest.raises(ValueError):
        epsilon_sweep("b", {}, [0.2, 0.1])
    with pytest.raises(ValueError):
        epsilon_sweep("b", {}, [0.2, 0.3, 0.1])
