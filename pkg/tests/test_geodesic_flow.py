import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anosov_lab.errors import ChartExit, SeparationTooLarge, StepSizeUnderflow
from anosov_lab.geodesic_flow import (
    SasakiVector,
    UnitTangentState,
    frame_gram_error,
    integrate_geodesic,
    normal_frame,
    sasaki_distance_smallscale,
    sasaki_norm,
    speed_error,
    state_at_angle,
    transport_frame,
    unit_state,
)
from anosov_lab.metric_models import ConformalPerturbed, CustomChart, Hyperbolic, WarpedProduct


def hyperbolic_closed_form(x0, y0, theta, t):
    """Unit-speed geodesic of the upper half-plane from (x0, y0) at angle theta."""
    if abs(math.cos(theta)) < 1e-15:
        return x0, y0 * math.exp(math.copysign(t, math.sin(theta)))
    # semicircle centred on the x-axis: x = xc + rho tanh(s), y = rho sech(s)
    rho = y0 / abs(math.cos(theta))
    sgn = math.copysign(1.0, math.cos(theta))
    xc = x0 + y0 * math.tan(theta)
    s_init = math.atanh((x0 - xc) / rho)
    s = s_init + sgn * t
    return xc + rho * math.tanh(s), rho / math.cosh(s)


# closed-form geodesics --------------------------------------------------------

def test_vertical_geodesic(hyp1):
    orbit = integrate_geodesic(hyp1, UnitTangentState((0, 1), (0, 1)), 2.0)
    np.testing.assert_allclose(orbit.positions[-1], [0, math.e ** 2], rtol=1e-9)
    assert orbit.times[-1] == 2.0 and orbit.complete


def test_unit_circle_geodesic(hyp1):
    orbit = integrate_geodesic(hyp1, UnitTangentState((0, 1), (1, 0)), 1.0)
    np.testing.assert_allclose(orbit.positions[-1], [math.tanh(1), 1 / math.cosh(1)], atol=1e-10)
    assert orbit.positions[-1] == pytest.approx([0.76159, 0.64805], abs=1e-5)


def test_backward_flow(hyp1):
    orbit = integrate_geodesic(hyp1, UnitTangentState((0, 1), (0, 1)), -2.0)
    np.testing.assert_allclose(orbit.positions[-1], [0, math.exp(-2)], rtol=1e-9)
    assert orbit.times[-1] == -2.0
    asc = orbit.ascending()
    assert np.all(np.diff(asc.times) > 0)


def test_zero_time(warped_mix):
    th = state_at_angle(warped_mix, (0.3, 1.0), 0.4)
    orbit = integrate_geodesic(warped_mix, th, 0.0)
    assert len(orbit) == 1
    np.testing.assert_array_equal(orbit.positions[0], th.p)
    np.testing.assert_array_equal(orbit.velocities[0], th.v)


@settings(max_examples=25, deadline=None)
@given(st.floats(-1, 1), st.floats(0.5, 2), st.floats(0.05, 2 * math.pi - 0.05), st.floats(0.1, 6))
def test_hyperbolic_matches_closed_form(x0, y0, angle, T):
    model = Hyperbolic(1.0)
    th = state_at_angle(model, (x0, y0), angle)
    orbit = integrate_geodesic(model, th, T, dense_dt=None)
    x, y = hyperbolic_closed_form(x0, y0, angle, T)
    # chart error scales with y
    assert abs(orbit.positions[-1][0] - x) <= 1e-8 * max(1.0, y, 1 / y)
    assert abs(orbit.positions[-1][1] - y) <= 1e-8 * max(1.0, y, 1 / y)


def test_scaled_hyperbolic_matches_closed_form():
    # K = -c^2: the c = 1 curve run at speed c
    c = 2.0
    model = Hyperbolic(c)
    th = state_at_angle(model, (0.2, 1.3), 0.7)
    orbit = integrate_geodesic(model, th, 1.5, dense_dt=None)
    x, y = hyperbolic_closed_form(0.2, 1.3, 0.7, c * 1.5)
    np.testing.assert_allclose(orbit.positions[-1], [x, y], atol=1e-9)


def test_non_unit_rejected(hyp1):
    with pytest.raises(ValueError):
        integrate_geodesic(hyp1, UnitTangentState((0, 1), (0, 2)), 1.0)


def test_chart_exit_partial():
    disk = CustomChart("euclidean", radius=1.0)
    th = UnitTangentState((0.0, 0.0), (1.0, 0.0))  # leaves the unit disk at t = 1
    orbit = integrate_geodesic(disk, th, 5.0)
    assert not orbit.complete
    assert 0.9 < orbit.t1 <= 1.0
    assert np.all([disk.in_domain(p) for p in orbit.positions])
    with pytest.raises(ChartExit) as info:
        integrate_geodesic(disk, th, 5.0, strict=True)
    assert info.value.segment is not None


def test_pole_stalls_polar_chart(sphere):
    # the polar chart is singular at r = pi; the frame blows up and the stepper stalls
    with pytest.raises(StepSizeUnderflow):
        integrate_geodesic(sphere, UnitTangentState((1.0, 0.0), (1.0, 0.0)), 5.0)


# frame and curvature ---------------------------------------------------------

@pytest.mark.parametrize("c", [0.5, 1.0, 1.7])
def test_constant_curvature_samples(c):
    model = Hyperbolic(c)
    orbit = integrate_geodesic(model, state_at_angle(model, (0.3, 0.9), 1.1), 20.0)
    assert np.abs(orbit.R + c * c).max() <= 1e-10
    assert np.abs(orbit.dR).max() == 0


def test_flat_frame_constant(flat):
    th = unit_state(flat, (1.0, 2.0), (3.0, 4.0))
    orbit = integrate_geodesic(flat, th, 7.0)
    assert np.abs(orbit.frames - orbit.frames[0]).max() <= 1e-12
    assert np.abs(orbit.R).max() <= 1e-8
    np.testing.assert_allclose(orbit.positions[-1], [1 + 7 * 0.6, 2 + 7 * 0.8], atol=1e-10)


def test_warped_radial_curvature_at_start(warped_mix):
    orbit = integrate_geodesic(warped_mix, UnitTangentState((0.0, 0.0), (1.0, 0.0)), 3.0)
    assert orbit.R[0, 0, 0] == pytest.approx(-1.6, abs=1e-12)
    for k in (10, 30, -1):
        r = orbit.positions[k][0]
        assert orbit.R[k, 0, 0] == pytest.approx(warped_mix.gaussian_curvature((r, 0.0)), abs=1e-10)


def test_curvature_rate_matches_node_slopes(warped_mix):
    orbit = integrate_geodesic(warped_mix, state_at_angle(warped_mix, (0.2, 0.0), 0.5), 4.0, dense_dt=0.01)
    fd = np.gradient(orbit.R[:, 0, 0], orbit.times)
    assert np.abs(fd[2:-2] - orbit.dR[2:-2, 0, 0]).max() < 1e-3


def test_frame_is_parallel(hyp1):
    # along the vertical geodesic the unit normal is -y d/dx (rotated velocity), constant in frame terms
    orbit = integrate_geodesic(hyp1, UnitTangentState((0, 1), (0, 1)), 3.0)
    expected = np.stack([-orbit.positions[:, 1], np.zeros(len(orbit))], axis=1)
    np.testing.assert_allclose(orbit.frames[:, :, 0], expected, rtol=1e-9)


def test_transport_frame_same_grid(warped_mix):
    th = state_at_angle(warped_mix, (0.1, 0.0), 0.8)
    orbit = integrate_geodesic(warped_mix, th, 5.0, dense_dt=0.1)
    again = transport_frame(warped_mix, orbit)
    np.testing.assert_array_equal(again.times, orbit.times)
    np.testing.assert_allclose(again.frames, orbit.frames, atol=1e-9)
    np.testing.assert_allclose(again.R, orbit.R, atol=1e-9)


def test_three_dimensional_frame():
    model = Hyperbolic(1.0, dim=3)
    th = unit_state(model, (0.0, 0.0, 1.0), (0.3, -0.2, 0.5))
    orbit = integrate_geodesic(model, th, 10.0)
    assert orbit.frames.shape[1:] == (3, 2)
    assert frame_gram_error(model, orbit) <= 1e-9
    np.testing.assert_allclose(orbit.R, np.broadcast_to(-np.eye(2), orbit.R.shape), atol=1e-6)


# hygiene ---------------------------------------------------------------------

@pytest.mark.parametrize("model", [Hyperbolic(1.0), ConformalPerturbed(1.0, eps=0.2),
                                   WarpedProduct("cosh_mix", weight=0.25)], ids=lambda m: m.label)
def test_speed_and_frame_drift_T50(model):
    p = (0.0, 1.0) if not isinstance(model, WarpedProduct) else (0.0, 0.0)
    orbit = integrate_geodesic(model, state_at_angle(model, p, 1.2), 50.0, tol=1e-10)
    assert speed_error(model, orbit) <= 1e-9
    assert frame_gram_error(model, orbit) <= 1e-9
    # corrections are measured before renormalization and stay small
    assert orbit.diagnostics["max_speed_correction"] <= 1e-9
    assert orbit.diagnostics["max_frame_correction"] <= 1e-9


def test_reversibility_vertical_T50(hyp1):
    tol = 1e-10
    th = UnitTangentState((0.0, 1.0), (0.0, 1.0))
    fwd = integrate_geodesic(hyp1, th, 50.0, tol=tol, dense_dt=None)
    back = integrate_geodesic(hyp1, fwd.state(len(fwd) - 1), -50.0, tol=tol, dense_dt=None)
    assert np.abs(back.positions[-1] - th.p).max() <= 100 * tol


@pytest.mark.parametrize("model", [Hyperbolic(1.0), ConformalPerturbed(1.0, eps=0.2),
                                   WarpedProduct("cosh_mix", weight=0.25)], ids=lambda m: m.label)
def test_reversibility_generic_short(model):
    tol = 1e-10
    p = (0.1, 1.0) if not isinstance(model, WarpedProduct) else (0.1, 0.0)
    th = state_at_angle(model, p, 0.9)
    fwd = integrate_geodesic(model, th, 2.0, tol=tol, dense_dt=None)
    end = fwd.state(len(fwd) - 1)
    back = integrate_geodesic(model, UnitTangentState(end.p, -end.v), 2.0, tol=tol, dense_dt=None)
    assert np.abs(back.positions[-1] - th.p).max() <= 100 * tol
    assert np.abs(back.velocities[-1] + th.v).max() <= 100 * tol


@pytest.mark.parametrize("model", [Hyperbolic(1.0), WarpedProduct("cosh_mix", weight=0.25)], ids=lambda m: m.label)
def test_flow_property(model):
    tol = 1e-10
    p = (0.1, 1.0) if isinstance(model, Hyperbolic) else (0.1, 0.0)
    th = state_at_angle(model, p, 0.9)
    full = integrate_geodesic(model, th, 5.0, tol=tol, dense_dt=None, dense_times=[2.0])
    k = full.index_of(2.0)
    rest = integrate_geodesic(model, full.state(k), 3.0, tol=tol, dense_dt=None)
    assert np.abs(rest.positions[-1] - full.positions[-1]).max() <= 10 * tol


def test_orbit_slice_and_index(hyp1):
    orbit = integrate_geodesic(hyp1, UnitTangentState((0, 1), (0, 1)), 4.0)
    k = orbit.index_of(2.0)
    assert orbit.times[k] == pytest.approx(2.0, abs=1e-12)
    part = orbit.slice(1.0, 3.0)
    assert part.t0 == pytest.approx(1.0) and part.t1 == pytest.approx(3.0)
    rev = orbit.reversed()
    assert rev.times[0] == pytest.approx(-4.0) and np.all(np.diff(rev.times) > 0)


def test_orbit_csv(hyp1):
    orbit = integrate_geodesic(hyp1, UnitTangentState((0, 1), (1, 0)), 1.0)
    lines = orbit.to_csv().splitlines()
    assert lines[0].startswith("# schema=orbit/1")
    assert lines[1] == "t,x0,x1,v0,v1,V0_0,V0_1,R00"
    last = [float(x) for x in lines[-1].split(",")]
    assert last[0] == 1.0
    assert last[1:3] == pytest.approx([0.76159, 0.64805], abs=1e-5)
    assert len(lines) == len(orbit) + 2


# Sasaki ----------------------------------------------------------------------

def test_sasaki_norm_examples():
    assert sasaki_norm(SasakiVector([3.0], [4.0])) == 5.0
    assert sasaki_norm(SasakiVector([0.0, 0.0], [0.0, 0.0])) == 0.0
    assert sasaki_norm(SasakiVector([1.0], [1.0])) == pytest.approx(math.sqrt(2))


def test_sasaki_vector_shape_check():
    with pytest.raises(ValueError):
        SasakiVector([1.0], [1.0, 2.0])


def test_sasaki_distance_identity(hyp1):
    th = UnitTangentState((0.0, 1.0), (1.0, 0.0))
    assert sasaki_distance_smallscale(hyp1, th, th) == 0.0


def test_sasaki_distance_horizontal_shift(hyp1):
    # (1,0) at fixed y is not parallel along x: Gamma^y_xx = 1/y turns it at unit
    # rate, so the vertical part equals the base part and d/h -> sqrt(2)
    th = UnitTangentState((0.0, 1.0), (1.0, 0.0))
    ratios = [sasaki_distance_smallscale(hyp1, th, UnitTangentState((h, 1.0), (1.0, 0.0))) / h
              for h in (1e-2, 1e-3, 1e-4)]
    assert ratios[-1] == pytest.approx(math.sqrt(2), abs=1e-3)


def test_sasaki_distance_base_only(hyp1):
    # moving along the geodesic with its parallel velocity: only the base part
    th = UnitTangentState((0.0, 1.0), (0.0, 1.0))
    for h in (1e-2, 1e-3, 1e-4):
        other = UnitTangentState((0.0, math.exp(h)), (0.0, math.exp(h)))
        assert sasaki_distance_smallscale(hyp1, th, other) / h == pytest.approx(1.0, abs=1e-3)


def test_sasaki_distance_rotation(hyp1):
    p = (0.0, 1.0)
    th = state_at_angle(hyp1, p, 0.3)
    for d in (1e-2, 1e-3, 1e-4):
        other = state_at_angle(hyp1, p, 0.3 + d)
        assert sasaki_distance_smallscale(hyp1, th, other) == pytest.approx(d, rel=1e-4)


def test_sasaki_distance_too_far(hyp1):
    with pytest.raises(SeparationTooLarge):
        sasaki_distance_smallscale(hyp1, UnitTangentState((0, 1), (1, 0)), UnitTangentState((0.5, 1), (1, 0)))


def test_normal_frame_orthonormal(warped_mix):
    th = state_at_angle(warped_mix, (0.7, 2.0), 2.1)
    F = normal_frame(warped_mix, th.p, th.v)
    g = warped_mix.metric_tensor(th.p)
    B = np.column_stack([F, th.v])
    np.testing.assert_allclose(B.T @ g @ B, np.eye(2), atol=1e-14)
    # positive orientation: rotated by +90 degrees
    assert np.linalg.det(np.column_stack([th.v, F[:, 0]])) > 0
