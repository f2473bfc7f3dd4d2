import math

import numpy as np
import pytest

from anosov_lab.errors import BlowUp, ConjugatePointOnSegment, GridMismatch, NoConvergence
from anosov_lab.geodesic_flow import UnitTangentState, integrate_geodesic, state_at_angle, unit_state
from anosov_lab.jacobi_riccati import (
    backward_extender,
    constant_curvature_orbit,
    detect_conjugate_points,
    green_bvp,
    green_limit,
    riccati_flow,
    solve_jacobi_ivp,
    stable_at,
    unstable_at,
    wronskian,
)
from anosov_lab.metric_models import Hyperbolic, WarpedProduct


# Jacobi IVP -------------------------------------------------------------------

def test_jacobi_sinh():
    path = solve_jacobi_ivp(constant_curvature_orbit(-1.0, 10.0), 0.0, 1.0)
    assert path.values[-1, 0, 0] == pytest.approx(math.sinh(10.0), rel=1e-9)
    assert path.derivative_values[-1, 0, 0] == pytest.approx(math.cosh(10.0), rel=1e-9)


def test_jacobi_flat_is_linear():
    path = solve_jacobi_ivp(constant_curvature_orbit(0.0, 4.0), 0.0, 1.0)
    np.testing.assert_allclose(path.values[:, 0, 0], path.times, atol=1e-12)


def test_jacobi_sphere_returns_to_zero():
    orbit = constant_curvature_orbit(1.0, math.pi, dt=math.pi / 60)
    path = solve_jacobi_ivp(orbit, 0.0, 1.0)
    assert abs(path.values[-1, 0, 0]) < 1e-6
    np.testing.assert_allclose(path.values[:, 0, 0], np.sin(path.times), atol=1e-8)


def test_jacobi_backward():
    orbit = constant_curvature_orbit(-1.0, 3.0)
    path = solve_jacobi_ivp(orbit, math.cosh(3.0), math.sinh(3.0), t_start=3.0, t_end=0.0)
    assert path.values[0, 0, 0] == pytest.approx(1.0, abs=1e-9)


def test_wronskian_constant(hyp1):
    th = state_at_angle(hyp1, (0.0, 1.0), 0.8)
    orbit = integrate_geodesic(hyp1, th, 8.0)
    a = solve_jacobi_ivp(orbit, 1.0, 0.0)
    b = solve_jacobi_ivp(orbit, 0.0, 1.0)
    W = wronskian(a, b)[:, 0, 0]
    assert np.max(np.abs(W - W[0])) < 1e-6 * abs(W[0])


def test_jacobi_needs_curvature(hyp1):
    orbit = integrate_geodesic(hyp1, UnitTangentState((0, 1), (0, 1)), 1.0)
    bare = type(orbit)(times=orbit.times, positions=orbit.positions, velocities=orbit.velocities)
    with pytest.raises(GridMismatch):
        solve_jacobi_ivp(bare, 0.0, 1.0)


def test_matrix_path_off_grid():
    path = solve_jacobi_ivp(constant_curvature_orbit(-1.0, 1.0), 0.0, 1.0)
    with pytest.raises(GridMismatch):
        path.at(0.123)


# Green's boundary value problem -------------------------------------------------

def test_green_bvp_coth():
    orbit = constant_curvature_orbit(-1.0, -10.0)
    path = green_bvp(orbit, s=-10.0, t0=0.0)
    assert path.diagnostics["U_s"][0, 0] == pytest.approx(1.0 / math.tanh(10.0), rel=1e-9)
    assert path.diagnostics["residual_start"] < 1e-12
    assert path.diagnostics["residual_end"] < 1e-12
    np.testing.assert_allclose(path.values[:, 0, 0],
                               np.sinh(path.times + 10.0) / math.sinh(10.0), rtol=1e-8, atol=1e-12)


def test_green_bvp_flat():
    orbit = constant_curvature_orbit(0.0, -1.0)
    path = green_bvp(orbit, s=-1.0)
    assert path.diagnostics["U_s"][0, 0] == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(path.values[:, 0, 0], path.times + 1.0, atol=1e-12)


def test_green_bvp_conjugate_point():
    orbit = constant_curvature_orbit(1.0, -math.pi, dt=math.pi / 60)
    with pytest.raises(ConjugatePointOnSegment):
        green_bvp(orbit, s=-math.pi)


# Green's limit ------------------------------------------------------------------------

@pytest.mark.parametrize("c", [1.0, 2.0])
def test_green_limit_hyperbolic(c):
    model = Hyperbolic(c)
    res = unstable_at(model, unit_state(model, (0.0, 1.0), (0.0, 1.0)), c)
    assert res.converged
    assert res.U_plus[0, 0] == pytest.approx(c, abs=1e-8)
    gaps = [g for _, _, g in res.history if math.isfinite(g)]
    assert all(b <= a / 100 for a, b in zip(gaps, gaps[1:]))
    assert res.green_bound_ok


def test_green_limit_generic_hyperbolic(hyp1):
    th = state_at_angle(hyp1, (0.4, 0.7), 2.1)
    assert unstable_at(hyp1, th, 1.0).U_plus[0, 0] == pytest.approx(1.0, abs=1e-8)
    assert stable_at(hyp1, th, 1.0).U_plus[0, 0] == pytest.approx(-1.0, abs=1e-8)


def test_green_limit_warped_neck(warped_mix):
    # the neck r = 0 is a geodesic with constant K = -1.6
    th = unit_state(warped_mix, (0.0, 0.0), (0.0, 1.0))
    res = unstable_at(warped_mix, th, 2.0)
    assert res.U_plus[0, 0] == pytest.approx(math.sqrt(1.6), abs=1e-7)


def test_green_limit_warped_bounds_and_brute_force(warped_mix):
    th = state_at_angle(warped_mix, (0.3, 1.0), 0.7)
    res = unstable_at(warped_mix, th, 2.0)
    u = res.U_plus[0, 0]
    assert math.sqrt(1.6) - 1e-6 <= u <= 2.0
    # the Riccati flow forward from any two nonnegative data at -T forgets them
    orbit = backward_extender(warped_mix, th)(30.0)
    for U0 in (0.0, 2.0):
        U = riccati_flow(orbit, U0, t_start=-30.0, t_end=0.0).values[-1, 0, 0]
        assert U == pytest.approx(u, abs=1e-7)


def test_green_limit_no_convergence(hyp1):
    th = UnitTangentState((0.0, 1.0), (0.0, 1.0))
    with pytest.raises(NoConvergence):
        green_limit(backward_extender(hyp1, th), 1.0, tol=1e-14, T_max=20.0)


def test_green_limit_csv(hyp1):
    res = unstable_at(hyp1, UnitTangentState((0.0, 1.0), (0.0, 1.0)), 1.0)
    lines = res.to_csv().splitlines()
    assert lines[0].startswith("# schema=green-limit/1")
    assert lines[1] == "T_back,U00,cauchy_gap"
    assert len(lines) == 2 + len(res.history)


# Riccati flow ---------------------------------------------------------------------------

def test_riccati_fixed_point():
    path = riccati_flow(constant_curvature_orbit(-1.0, 5.0), 1.0)
    np.testing.assert_allclose(path.values[:, 0, 0], 1.0, atol=1e-12)


def test_riccati_tanh():
    path = riccati_flow(constant_curvature_orbit(-1.0, 5.0), 0.0)
    assert path.values[-1, 0, 0] == pytest.approx(0.99991, abs=1e-5)
    np.testing.assert_allclose(path.values[:, 0, 0], np.tanh(path.times), atol=1e-10)


def test_riccati_blowup_on_sphere():
    with pytest.raises(BlowUp) as info:
        riccati_flow(constant_curvature_orbit(1.0, 3.0), 0.0)
    assert info.value.time == pytest.approx(math.pi / 2, abs=1e-3)


def test_riccati_rejects_asymmetric():
    orbit = constant_curvature_orbit(-np.eye(2), 1.0)
    with pytest.raises(ValueError):
        riccati_flow(orbit, [[0.0, 1.0], [0.0, 0.0]])


def test_riccati_symmetry_3d():
    model = Hyperbolic(1.0, dim=3)
    th = unit_state(model, (0.0, 0.0, 1.0), (0.3, -0.5, 0.8))
    orbit = integrate_geodesic(model, th, 50.0)
    U0 = np.array([[0.5, 0.2], [0.2, 0.9]])
    path = riccati_flow(orbit, U0)
    assert path.max_asymmetry() < 1e-9
    np.testing.assert_allclose(path.values[-1], np.eye(2), atol=1e-9)


def test_unstable_semigroup(warped_mix):
    # U+ transported by the Riccati flow equals Green's limit computed at phi^t theta
    th = state_at_angle(warped_mix, (0.2, 0.5), 1.1)
    u0 = unstable_at(warped_mix, th, 2.0).U_plus
    orbit = integrate_geodesic(warped_mix, th, 10.0, dense_dt=1.0)
    path = riccati_flow(orbit, u0)
    for t in range(1, 11):
        k = orbit.index_of(float(t))
        direct = unstable_at(warped_mix, orbit.state(k), 2.0, frame0=orbit.frames[k]).U_plus
        assert np.max(np.abs(path.at(float(t)) - direct)) < 1e-6


def test_riccati_comparison_monotone():
    orbit = constant_curvature_orbit(-1.0, 3.0)
    lo = riccati_flow(orbit, 0.2).values[:, 0, 0]
    hi = riccati_flow(orbit, 0.7).values[:, 0, 0]
    assert np.all(hi >= lo)


# conjugate points -----------------------------------------------------------------------

def test_no_conjugate_points_hyperbolic(hyp1):
    orbit = integrate_geodesic(hyp1, state_at_angle(hyp1, (0.0, 1.0), 0.4), 10.0)
    assert detect_conjugate_points(orbit) == []


def test_no_conjugate_points_flat():
    assert detect_conjugate_points(constant_curvature_orbit(np.zeros((2, 2)), 10.0)) == []


def test_conjugate_point_on_sphere_equator(sphere):
    orbit = integrate_geodesic(sphere, UnitTangentState((math.pi / 2, 0.0), (0.0, 1.0)), 4.0)
    points = detect_conjugate_points(orbit)
    assert len(points) == 1
    assert points[0] == pytest.approx(math.pi, abs=1e-6)


def test_matrix_path_csv():
    path = solve_jacobi_ivp(constant_curvature_orbit(-1.0, 1.0), 0.0, 1.0)
    lines = path.to_csv().splitlines()
    assert lines[0] == "# schema=matrix-path/1 kind=jacobi"
    assert lines[1] == "t,J00,D00"
    assert len(lines) == 2 + len(path)
