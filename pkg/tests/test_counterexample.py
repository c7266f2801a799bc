"""The Hoelder-drift construction of non-unique weak solutions."""

import jax.numpy as jnp
import numpy as np
import pytest
from scipy.integrate import solve_ivp

from kadvect.counterexample import (GammaSelection, HolderDrift, LinearRadialDrift,
                                    ball_l2_distance, ball_volume, characteristic_ode_residual,
                                    explicit_characteristics, holder_probe_ratio,
                                    nonunique_solution, t0_map, weak_residual_study)
from kadvect.exterior import KFormField, TestForm

E1 = np.array([1.0, 0.0])
K0 = KFormField.scalar(2, lambda t, x: jnp.exp(-jnp.sum(x**2)))


def test_drift_values():
    b = HolderDrift(0.5, 10.0).field()
    np.testing.assert_allclose(b(E1[None])[0], [2.0, 0.0])
    np.testing.assert_allclose(b(np.zeros((1, 2)))[0], [0.0, 0.0])
    far = b(np.array([[0.0, 20.0]]))[0]
    assert np.linalg.norm(far) == pytest.approx(2 * np.sqrt(10.0))
    assert HolderDrift(0.5, 10.0).bound == pytest.approx(2 * np.sqrt(10.0))


def test_drift_jacobian_matches_finite_differences(rng):
    b = HolderDrift(0.4, 1.5).field()
    pts = rng.uniform(-2, 2, size=(20, 2))
    pts = pts[np.abs(np.linalg.norm(pts, axis=1) - 1.5) > 1e-3]
    assert b.check_jacobian(pts, h=1e-6) < 1e-5


@pytest.mark.parametrize("alpha, R", [(0.0, 1.0), (1.0, 1.0), (0.5, -1.0)])
def test_drift_parameter_validation(alpha, R):
    with pytest.raises(ValueError):
        HolderDrift(alpha, R)


def test_explicit_characteristics():
    np.testing.assert_allclose(explicit_characteristics(E1, 1.0, 0.0, 0.5), E1)
    np.testing.assert_allclose(explicit_characteristics(E1, 0.7, 0.7, 0.5), 0.0)
    np.testing.assert_allclose(explicit_characteristics(E1, 2.0, 1.0, 0.5), E1)
    with pytest.raises(ValueError):
        explicit_characteristics(2 * E1, 1.0, 0.0, 0.5)
    with pytest.raises(ValueError):
        explicit_characteristics(E1, 0.5, 1.0, 0.5)


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
def test_characteristics_solve_the_ode(alpha):
    rep = characteristic_ode_residual(alpha, 10.0, E1, 0.2, 1.0, [1e-2, 5e-3, 2.5e-3, 1.25e-3])
    assert rep.verdict
    assert max(rep.errors) < 1e-3


def test_t0_map_inverts_the_family():
    t0, v = t0_map(1.0, 0.25 * E1[None], 0.5)
    assert t0[0] == pytest.approx(0.5)
    np.testing.assert_allclose(v[0], E1)
    assert t0_map(1.0, E1[None], 0.5)[0][0] == pytest.approx(0.0)
    with pytest.raises(ValueError):
        t0_map(1.0, 2 * E1[None], 0.5)
    with pytest.raises(ValueError):
        t0_map(1.0, np.zeros((1, 2)), 0.5)


@pytest.mark.parametrize("r, t", [(2.0, 0.5), (1.2, 0.8), (12.0, 1.0), (10.5, 2.0)])
def test_backward_radius_inverts_the_radial_ode(r, t):
    d = HolderDrift(0.5, 10.0)
    r0, _ = d.backward_radius(np.array([r]), np.array([t]))
    speed = lambda s, y: [d.c * min(y[0], d.R) ** d.alpha]  # noqa: E731
    sol = solve_ivp(speed, (0.0, t), [r0[0]], rtol=1e-12, atol=1e-12)
    assert sol.y[0, -1] == pytest.approx(r, rel=1e-8)


def test_backward_flow_rejects_points_in_the_ball():
    with pytest.raises(ValueError):
        HolderDrift(0.5, 10.0).backward_flow(0.5 * E1[None], 1.0)


def test_solution_inside_and_outside_the_ball():
    g = GammaSelection.constant(0.25)
    x = np.array([[0.5, 0.0], [2.0, 0.0]])
    u = nonunique_solution(g, K0, 1.0, x, alpha=0.5)
    assert u[0, 0] == 0.25
    # outside: transported datum; the backward radius of 2 at t = 1 is (sqrt 2 - 1)^2
    assert u[1, 0] == pytest.approx(np.exp(-((np.sqrt(2) - 1) ** 2) ** 2))
    with pytest.raises(ValueError):
        nonunique_solution(g, K0, 1.0, np.zeros((1, 2)), alpha=0.5)


def test_selection_bound_is_enforced():
    bad = GammaSelection(lambda v, t0: np.full((len(t0), 1), 3.0), bound=1.0)
    with pytest.raises(ValueError):
        bad(np.array([E1]), np.array([0.1]))


@pytest.mark.parametrize("c1, c2", [(0.0, 1.0), (0.3, -0.7), (1.0, 1.0)])
def test_l2_distance_of_constant_fills(c1, c2):
    d = HolderDrift(0.5, 10.0)
    t = 0.8
    dist = ball_l2_distance(GammaSelection.constant(c1), GammaSelection.constant(c2), K0, t, d)
    assert dist == pytest.approx(abs(c1 - c2) * np.sqrt(ball_volume(2, t**2)), rel=1e-10, abs=1e-14)


def test_every_bounded_fill_is_a_weak_solution_but_not_for_the_smooth_control():
    theta = TestForm(KFormField.constant(2, 0, 1.0), 0.8, center=[0.1, 0.0])
    levels = [(12, 16, 4), (24, 32, 8)]
    for g in (GammaSelection.matched(K0), GammaSelection.zero(), GammaSelection.angular(0.5)):
        st = weak_residual_study(g, K0, theta, (0.3, 0.8), HolderDrift(0.5, 10.0), levels)
        assert st.final < 1e-3, (g.label, st.relative)
    ctrl = weak_residual_study(GammaSelection.zero(), K0, theta, (0.3, 0.8),
                               LinearRadialDrift(1.0, 0.5), levels)
    assert ctrl.final > 1e-2


def test_holder_probe_is_stable_and_bounded():
    d = HolderDrift(0.5, 1.0)
    b = d.field()
    r1 = holder_probe_ratio(b, 0.5, 2.0, n_pairs=5_000, seed=1)
    r4 = holder_probe_ratio(b, 0.5, 2.0, n_pairs=20_000, seed=2)
    assert abs(r1 - r4) <= 0.05 * r4
    # |x|^a x/|x| is a-Hoelder with constant at most 2^(1-a) * c
    assert r4 <= 2 ** 0.5 * d.c
