"""Pushforward solutions, weak residuals, the Ito-Wentzell check and conservation."""

from math import factorial

import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kadvect.advection import (Chain, PushforwardSolution, conservation_check, kiw_residual,
                               kiw_transport_gap, simplex_rule, solve_pushforward,
                               weak_residual, weak_residual_convergence)
from kadvect.exterior import KFormField, QuadratureGrid, TestForm, VectorField
from kadvect.flow import generate_paths, integrate_flow, uniform_grid


def _bump(n, k, radius=0.6, value=None):
    from math import comb
    v = np.linspace(1.0, 0.5, comb(n, k)) if value is None else value
    return TestForm(KFormField.constant(n, k, v), radius)


K0_1FORM = KFormField(2, 1, lambda t, x: jnp.stack([jnp.sin(x[0]) + x[1], jnp.exp(-x[0] ** 2)]))
STILL = generate_paths(1, uniform_grid(0.5, 32), seed=0, n_paths=1, zero=True)


# pushforward --------------------------------------------------------------------------
def test_solution_at_time_zero_is_the_datum():
    sol = PushforwardSolution(K0_1FORM, VectorField.constant([1.0, 0.0]), [], STILL)
    x = np.array([[0.2, 0.3], [-1.0, 0.5]])
    np.testing.assert_allclose(sol(x, 0.0)[0], K0_1FORM(x))


def test_constant_drift_translates():
    c = np.array([0.8, -0.4])
    sol = PushforwardSolution(K0_1FORM, VectorField.constant(c), [], STILL)
    x = np.array([[0.2, 0.3], [-1.0, 0.5]])
    np.testing.assert_allclose(sol(x, 0.5)[0], K0_1FORM(x - 0.5 * c), atol=1e-13)


def test_constant_noise_shifts_by_the_driver():
    paths = generate_paths(1, uniform_grid(0.5, 32), seed=3, n_paths=5)
    c = np.array([0.5, 1.0])
    sol = PushforwardSolution(K0_1FORM, VectorField.zero(2), [VectorField.constant(c)], paths)
    x = np.array([[0.1, 0.1]])
    vals = sol(x, 0.5)
    for p in range(5):
        shifted = x - paths.W()[p, -1, 0] * c
        np.testing.assert_allclose(vals[p], K0_1FORM(shifted), atol=1e-12)


def test_linear_drift_compresses_volume():
    A = np.array([[0.3, 0.2], [-0.1, 0.4]])
    paths = generate_paths(1, uniform_grid(0.5, 256), seed=0, n_paths=1, zero=True)
    vol = KFormField.basis_form(2, (1, 2))
    sol = PushforwardSolution(vol, VectorField.linear(A), [], paths)
    assert sol(np.array([[0.3, 0.1]]), 0.5)[0, 0, 0] == pytest.approx(np.exp(-0.5 * np.trace(A)),
                                                                      rel=1e-6)


def test_off_grid_time_and_forward_ensemble_are_rejected():
    sol = PushforwardSolution(K0_1FORM, VectorField.zero(2), [], STILL)
    with pytest.raises(ValueError):
        sol(np.zeros((1, 2)), 0.123)
    fwd = integrate_flow(VectorField.zero(2), [], STILL, np.zeros((1, 2)))
    with pytest.raises(ValueError):
        solve_pushforward(K0_1FORM, fwd)


# weak form --------------------------------------------------------------------------------
GRID = QuadratureGrid.cube(2, 1.6, 24, panels=4)


def test_weak_residual_vanishes_without_motion():
    rep = weak_residual(K0_1FORM, VectorField.zero(2), [], STILL, _bump(2, 1), GRID)
    assert np.max(np.abs(rep.residual)) < 1e-14


def test_weak_residual_of_translation_is_first_order():
    b = VectorField.constant([0.6, 0.3])
    paths = generate_paths(1, uniform_grid(0.5, 64), seed=0, n_paths=1, zero=True)
    rep = weak_residual_convergence(K0_1FORM, b, [], paths, _bump(2, 1), GRID, [3, 2, 1, 0],
                                    threshold=0.9)
    assert rep.verdict, rep.rate
    assert rep.rate < 1.2


def test_weak_residual_rejects_support_outside_grid():
    with pytest.raises(ValueError):
        weak_residual(K0_1FORM, VectorField.zero(2), [], STILL, _bump(2, 1, radius=2.0), GRID)


# Ito-Wentzell ---------------------------------------------------------------------------------
def test_kiw_explicit_time_dependence_is_exact():
    G = KFormField(2, 1, lambda t, x: jnp.stack([x[0] * x[1], jnp.cos(x[1])]))
    paths = generate_paths(1, uniform_grid(0.5, 16), seed=0, n_paths=1, zero=True)
    rep = kiw_residual(K0_1FORM, G, [], VectorField.zero(2), [], paths, _bump(2, 1), GRID)
    assert np.max(np.abs(rep.gap)) < 1e-13


def test_kiw_martingale_part_is_exact_without_flow():
    H = KFormField(2, 1, lambda t, x: jnp.stack([x[1], 1.0 + 0.0 * x[0]]))
    paths = generate_paths(1, uniform_grid(0.5, 16), seed=2, n_paths=4)
    rep = kiw_residual(K0_1FORM, KFormField.zero(2, 1), [H], VectorField.zero(2), [], paths,
                       _bump(2, 1), GRID)
    assert np.max(np.abs(rep.gap)) < 1e-13
    assert np.all(rep.cross_term == 0)


def test_kiw_transport_gap_vanishes_for_translation():
    paths = generate_paths(1, uniform_grid(0.5, 16), seed=0, n_paths=1, zero=True)
    rep = kiw_transport_gap(K0_1FORM, VectorField.constant([0.4, 0.1]), [], paths, _bump(2, 1),
                            GRID)
    assert rep.rms_gap < 1e-12


def test_kiw_coupling_validation():
    paths = generate_paths(1, uniform_grid(0.5, 16), seed=0, n_paths=1)
    H = [KFormField.zero(2, 1)]
    xi = [VectorField.constant([1.0, 0.0])]
    with pytest.raises(ValueError):
        kiw_residual(K0_1FORM, KFormField.zero(2, 1), H, VectorField.zero(2), xi, paths,
                     _bump(2, 1), GRID, coupling="independent")
    with pytest.raises(ValueError):
        kiw_residual(K0_1FORM, KFormField.zero(2, 1), H, VectorField.zero(2), xi, paths,
                     _bump(2, 1), GRID, coupling="bogus")


# chains and conservation --------------------------------------------------------------------------
@settings(max_examples=25, deadline=None)
@given(a=st.integers(0, 3), b=st.integers(0, 3))
def test_simplex_rule_is_exact_for_low_degree(a, b):
    if a + b > 5:
        return
    u, w = simplex_rule(2, order=5)
    expect = factorial(a) * factorial(b) / factorial(a + b + 2)
    assert float(w @ (u[:, 0] ** a * u[:, 1] ** b)) == pytest.approx(expect, rel=1e-12)


def test_simplex_rule_weights_sum_to_volume():
    for k in range(4):
        assert simplex_rule(k)[1].sum() == pytest.approx(1 / factorial(k), rel=1e-13)


def test_chain_integrals_and_json_round_trip():
    sq = Chain.unit_square(lo=(0.5, -0.5))
    assert sq.integrate(KFormField.basis_form(2, (1, 2))) == pytest.approx(1.0, rel=1e-14)
    f = KFormField.density(2, lambda t, x: x[0] * x[1])
    assert sq.integrate(f) == pytest.approx(0.0, abs=1e-14)
    again = Chain.from_json(sq.to_json())
    np.testing.assert_array_equal(again.vertices, sq.vertices)
    seg = Chain.segment([0.0, 0.0], [1.0, 2.0])
    # int of x1 dx2 along the segment = int_0^1 t * 2 dt
    assert seg.integrate(KFormField.from_channels(2, 1, {(2,): lambda t, x: x[0]})) \
        == pytest.approx(1.0, rel=1e-13)


def test_rotation_preserves_area_of_unit_square():
    # Heun's determinant defect per step is O(h^4)
    paths = generate_paths(1, uniform_grid(1.0, 128), seed=0, n_paths=1, zero=True)
    rot = VectorField.linear([[0.0, -1.0], [1.0, 0.0]])
    rep = conservation_check(KFormField.basis_form(2, (1, 2)), Chain.unit_square(), rot, [], paths)
    assert rep.initial == pytest.approx(1.0)
    assert rep.rms_gap < 1e-6


def test_constant_drift_preserves_line_integral():
    paths = generate_paths(1, uniform_grid(1.0, 16), seed=5, n_paths=3)
    rep = conservation_check(K0_1FORM, Chain.segment([-0.5, -0.2], [0.4, 0.6]),
                             VectorField.constant([0.3, 0.1]), [VectorField.constant([0.2, 0.5])],
                             paths)
    assert rep.rms_gap < 1e-12


def test_conservation_degree_mismatch():
    with pytest.raises(ValueError):
        conservation_check(K0_1FORM, Chain.unit_square(), VectorField.zero(2), [], STILL)
