import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from anosov_lab.errors import GridMismatch, NoConvergence, SingularInput, WindowTooShort
from anosov_lab.geodesic_flow import UnitTangentState, integrate_geodesic, state_at_angle
from anosov_lab.jacobi_riccati import constant_curvature_orbit, riccati_flow, solve_jacobi_ivp
from anosov_lab.metric_models import ConformalPerturbed, Hyperbolic, curvature_bounds
from anosov_lab.spectra import (
    GrowthCurve,
    analyze_point,
    birkhoff_ricci,
    contraction_constant,
    contraction_from_analyses,
    det_exponent_direct,
    det_exponent_via_trace,
    graph_projection_det,
    lyapunov_exponent,
    operator_norm_det_bounds,
    operator_norm_det_check,
    r_diagnostic,
    tangent_growth,
)

HALF_LOG2 = 0.5 * math.log(2.0)


# growth curves ------------------------------------------------------------------

def test_unstable_growth_constant_curvature():
    orbit = constant_curvature_orbit(-1.0, 20.0)
    curve = tangent_growth(orbit, 1.0, [1.0], "unstable")
    np.testing.assert_allclose(curve.log_norm, curve.times + HALF_LOG2, atol=1e-8)


def test_stable_growth_on_bundle():
    orbit = constant_curvature_orbit(-1.0, 20.0)
    U = riccati_flow(orbit, -1.0)
    curve = tangent_growth(orbit, -1.0, [1.0], "stable", U_path=U)
    assert curve.method == "bundle"
    np.testing.assert_allclose(curve.log_norm, -curve.times + HALF_LOG2, atol=1e-9)


def test_flat_growth_zero_exponent():
    orbit = constant_curvature_orbit(0.0, 50.0)
    curve = tangent_growth(orbit, 0.0, [1.0], "unstable")
    np.testing.assert_allclose(curve.log_norm, 0.0, atol=1e-12)
    assert lyapunov_exponent(curve).value == pytest.approx(0.0, abs=1e-12)


def test_growth_bad_tag():
    with pytest.raises(ValueError):
        tangent_growth(constant_curvature_orbit(-1.0, 1.0), 1.0, [1.0], "neutral")


def test_growth_grid_mismatch():
    orbit = constant_curvature_orbit(-1.0, 2.0)
    other = riccati_flow(constant_curvature_orbit(-1.0, 2.0, dt=0.1), -1.0)
    with pytest.raises(GridMismatch):
        tangent_growth(orbit, -1.0, [1.0], "stable", U_path=other)


def test_growth_csv():
    curve = tangent_growth(constant_curvature_orbit(-1.0, 1.0), 1.0, [1.0], "unstable")
    lines = curve.to_csv().splitlines()
    assert lines[0] == "# schema=growth/1 bundle=unstable"
    assert lines[1] == "t,log_norm,log_base"


# Lyapunov exponents ----------------------------------------------------------------------

def test_lyapunov_hyperbolic_window(hyp1):
    th = state_at_angle(hyp1, (0.0, 1.0), 0.6)
    a = analyze_point(hyp1, th, 50.0, 1.0)
    window = (10.0, 50.0)
    assert lyapunov_exponent(a.unstable_curve, window).value == pytest.approx(1.0, abs=1e-6)
    assert lyapunov_exponent(a.stable_curve, window).value == pytest.approx(-1.0, abs=1e-6)


def test_lyapunov_default_window():
    times = np.linspace(0, 20, 401)
    curve = GrowthCurve(times, 0.3 * times + 1.0, "unstable")
    est = lyapunov_exponent(curve)
    assert est.window == (4.0, 20.0)
    assert est.value == pytest.approx(0.3, abs=1e-12)
    assert est.residual < 1e-12


def test_lyapunov_window_too_short():
    times = np.linspace(0, 20, 401)
    curve = GrowthCurve(times, times, "unstable")
    with pytest.raises(WindowTooShort):
        lyapunov_exponent(curve, (10.0, 14.0))


# determinant exponents -------------------------------------------------------------------

def test_det_exponent_trace_and_direct(hyp1):
    th = state_at_angle(hyp1, (0.2, 1.5), 1.3)
    a = analyze_point(hyp1, th, 20.0, 1.0)
    via_trace = a.det_trace()
    direct = a.det_direct(1.0)
    assert via_trace.value == pytest.approx(1.0, abs=1e-6)
    assert direct.value == pytest.approx(1.0, abs=1e-6)
    assert direct.extra["projection_bounds_ok"]


def test_det_exponent_direct_constant():
    orbit = constant_curvature_orbit(-np.eye(2) * 4.0, 10.0)
    U = 2.0 * np.eye(2)
    Y = solve_jacobi_ivp(orbit, np.eye(2), U)
    est = det_exponent_direct(orbit, Y, U, U, 2.0)
    assert est.value == pytest.approx(4.0, rel=1e-8)
    assert est.extra["projection_det"][0] == pytest.approx(5.0)
    Upath = riccati_flow(orbit, U)
    assert det_exponent_via_trace(orbit, Upath).value == pytest.approx(4.0, rel=1e-10)


def test_graph_projection_det():
    assert graph_projection_det([[1.0]]) == pytest.approx(math.sqrt(2.0))
    assert graph_projection_det(np.zeros((3, 3))) == pytest.approx(1.0)


def test_operator_norm_det_examples():
    lower, norm, upper = operator_norm_det_bounds(np.diag([2.0, 0.5]))
    assert (lower, norm, upper) == pytest.approx((1.0, 2.0, 2.0))
    assert operator_norm_det_check(np.eye(3))
    with pytest.raises(SingularInput):
        operator_norm_det_bounds(np.diag([1.0, 0.0]))


@settings(max_examples=1000, deadline=None)
@given(st.integers(1, 5).flatmap(
    lambda m: arrays(np.float64, (m, m), elements=st.floats(-10, 10, allow_nan=False))))
def test_operator_norm_det_inequality(A):
    s = np.linalg.svd(A, compute_uv=False)
    assume(s[-1] > 1e-8 * s[0])
    lower, norm, upper = operator_norm_det_bounds(A)
    assert norm == pytest.approx(s[0])
    assert operator_norm_det_check(A)


# Birkhoff average of the Ricci curvature ----------------------------------------------

@pytest.mark.parametrize("c", [1.0, 2.0])
def test_birkhoff_hyperbolic(c):
    model = Hyperbolic(c)
    orbit = integrate_geodesic(model, state_at_angle(model, (0.0, 1.0), 0.9), 10.0)
    assert birkhoff_ricci(orbit) == pytest.approx(-c * c, abs=1e-9)


def test_birkhoff_flat(flat):
    orbit = integrate_geodesic(flat, UnitTangentState((0.0, 0.0), (0.6, 0.8)), 5.0)
    assert birkhoff_ricci(orbit) == 0.0


def test_birkhoff_perturbed_within_bounds():
    model = ConformalPerturbed(1.0, eps=0.2)
    bounds = curvature_bounds(model)
    orbit = integrate_geodesic(model, state_at_angle(model, (0.1, 0.9), 1.2), 10.0)
    avg = birkhoff_ricci(orbit)
    assert bounds.inf_K - 1e-6 <= avg <= bounds.sup_K + 1e-6
    assert avg != pytest.approx(-1.0, abs=1e-4)


# r(t) diagnostic -------------------------------------------------------------------------

def _curve(slope, times, tag, offset=0.0):
    return GrowthCurve(times, slope * times + offset + HALF_LOG2, tag, log_base=slope * times + offset)


def test_r_constant_on_hyperbolic():
    t = np.linspace(0, 20, 201)
    r = r_diagnostic(_curve(-1.0, t, "stable"), _curve(1.0, t, "unstable"), math.exp(-1.0), 1.0)
    np.testing.assert_allclose(r.r, 1.0, atol=1e-12)
    assert r.bound == pytest.approx(math.sqrt(2.0))
    assert r.exceeds_at is None


def test_r_grows_when_lambda_too_small():
    t = np.linspace(0, 20, 201)
    lam = math.exp(-1.1)
    r = r_diagnostic(_curve(-1.0, t, "stable"), _curve(1.0, t, "unstable"), lam, 1.0)
    np.testing.assert_allclose(r.r, np.exp(0.2 * t), rtol=1e-12)
    assert r.exceeds_at == pytest.approx(t[np.argmax(np.exp(0.2 * t) > math.sqrt(2.0))])
    assert r.min_increment() > 0


def test_r_initial_value_and_csv():
    t = np.linspace(0, 10, 11)
    r = r_diagnostic(_curve(-1.0, t, "stable", 0.3), _curve(1.0, t, "unstable"), math.exp(-1.0), 2.0)
    assert r.r[0] == pytest.approx(math.exp(0.3))
    assert r.bound == pytest.approx(math.sqrt(5.0) * math.exp(0.3))
    lines = r.to_csv().splitlines()
    assert lines[0].startswith("# schema=r-diagnostic/1 lambda=")
    assert lines[1] == "t,r"


def test_r_grid_mismatch():
    with pytest.raises(GridMismatch):
        r_diagnostic(_curve(-1.0, np.linspace(0, 1, 5), "stable"),
                     _curve(1.0, np.linspace(0, 1, 6), "unstable"), 0.5, 1.0)


# contraction constant -------------------------------------------------------------------

@pytest.mark.parametrize("c", [1.0, 2.0])
def test_contraction_constant_hyperbolic(c):
    model = Hyperbolic(c)
    thetas = [state_at_angle(model, (0.0, 1.0), a) for a in (0.3, 1.9, 4.0)]
    est = contraction_constant(model, thetas, 50.0, c=c)
    assert est.lambda_hat == pytest.approx(math.exp(-c), rel=1e-5)
    assert len(est.per_point_rates) == 3
    assert est.skipped == []


def test_contraction_requires_long_T(hyp1):
    with pytest.raises(WindowTooShort):
        contraction_constant(hyp1, [UnitTangentState((0, 1), (0, 1))], 8.0)


def _fake(rate):
    return SimpleNamespace(theta=SimpleNamespace(to_dict=lambda: {"rate": rate}),
                           chi_s=SimpleNamespace(value=rate, residual=0.0))


def test_skip_rule():
    analyses = [_fake(-1.0 - 0.01 * k) for k in range(10)]
    est = contraction_from_analyses(analyses, [{"reason": "x"}], {})
    assert est.lambda_hat == pytest.approx(math.exp(-1.0))
    assert est.worst_point == {"rate": -1.0}
    with pytest.raises(NoConvergence):
        contraction_from_analyses(analyses[:9], [{"reason": "x"}, {"reason": "y"}], {})
    with pytest.raises(NoConvergence):
        contraction_from_analyses([], [], {})


def test_check_stable_matches_pullback(hyp1):
    th = state_at_angle(hyp1, (0.0, 2.0), 2.5)
    a = analyze_point(hyp1, th, 20.0, 1.0, check_stable=True)
    np.testing.assert_allclose(a.stable_direct.U_plus, a.U_minus, atol=1e-7)
    assert max(a.green_norms()) <= 1.0 + 1e-8
