"""Growth curves, Lyapunov and determinant exponents, contraction constants.

Stable growth is computed on the stable bundle itself: with U- known along
the orbit, J' = U- J is integrated instead of the Jacobi equation, whose
forward solution would be swamped by the unstable mode.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import simpson

from . import _kernels
from .errors import GridMismatch, NoConvergence, SingularInput, SingularY, StepSizeUnderflow, WindowTooShort
from .geodesic_flow import OrbitSegment, UnitTangentState, integrate_geodesic
from .jacobi_riccati import (
    GreenLimitResult,
    MatrixPath,
    riccati_flow,
    solve_jacobi_ivp,
    stable_at,
    unstable_at,
)
from .metric_models import MetricModel

log = logging.getLogger(__name__)

MIN_WINDOW = 5.0
SERIES_CSV_SCHEMA = "growth/1"
R_CSV_SCHEMA = "r-diagnostic/1"


@dataclass
class GrowthCurve:
    """log of the Sasaki norm of (J, J') along the orbit grid.

    ``log_base`` is log |J| alone (used by the r(t) diagnostic).
    """

    times: np.ndarray
    log_norm: np.ndarray
    bundle_tag: str
    log_base: Optional[np.ndarray] = None
    method: str = "jacobi"

    def to_csv(self, target=None) -> str:
        buf = io.StringIO()
        buf.write(f"# schema={SERIES_CSV_SCHEMA} bundle={self.bundle_tag}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "log_norm", "log_base"])
        base = self.log_base if self.log_base is not None else np.full_like(self.log_norm, np.nan)
        for row in zip(self.times, self.log_norm, base):
            w.writerow([repr(float(x)) for x in row])
        text = buf.getvalue()
        if target is not None:
            with open(target, "w", newline="") as fh:
                fh.write(text)
        return text


@dataclass
class ExponentEstimate:
    value: float
    window: Tuple[float, float]
    residual: float
    method_tag: str
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        out = {"value": self.value, "window": list(self.window), "residual": self.residual,
               "method": self.method_tag}
        out.update(self.extra)
        return out


def _window(times, window):
    t_lo, t_hi = (float(times[0]) + (float(times[-1]) - float(times[0])) / 5.0, float(times[-1])) \
        if window is None else (float(window[0]), float(window[1]))
    return t_lo, t_hi


def _window_mask(times, t_lo, t_hi):
    tol = 1e-9 * max(1.0, abs(t_hi))
    if t_lo < times[0] - tol or t_hi > times[-1] + tol:
        raise GridMismatch(f"window [{t_lo}, {t_hi}] outside grid [{times[0]}, {times[-1]}]")
    return (times >= t_lo - tol) & (times <= t_hi + tol)


def _sasaki_log_norm(J, Jp):
    return 0.5 * np.log(np.sum(J * J, axis=1) + np.sum(Jp * Jp, axis=1))


def tangent_growth(orbit: OrbitSegment, U_init, w, bundle_tag: str, tol: float = 1e-10,
                   U_path: Optional[MatrixPath] = None) -> GrowthCurve:
    """Growth of d(phi^t)(xi) for xi = (w, U_init w) in the given bundle.

    Without ``U_path`` the Jacobi IVP J(0) = w, J'(0) = U_init w is solved.
    With ``U_path`` (the bundle's U along the orbit) J' = U(t) J is
    integrated; this is the only accurate route for the stable bundle over
    long windows.
    """
    if bundle_tag not in ("stable", "unstable"):
        raise ValueError("bundle_tag must be 'stable' or 'unstable'")
    m = orbit.m
    w = np.asarray(w, dtype=float).reshape(m)
    U_init = np.asarray(U_init, dtype=float).reshape(m, m)
    if U_path is None:
        path = solve_jacobi_ivp(orbit, w.reshape(m, 1), (U_init @ w).reshape(m, 1), tol=tol)
        J = path.values[:, :, 0]
        Jp = path.derivative_values[:, :, 0]
        method = "jacobi"
    else:
        if len(U_path) != len(orbit) or not np.allclose(U_path.times, orbit.times, rtol=0, atol=1e-9):
            raise GridMismatch("U path grid does not match the orbit grid")
        U = np.ascontiguousarray(U_path.values)
        dU = np.ascontiguousarray(-(U @ U) - orbit.R)
        out, status, _, stats = _kernels.linear_nodes(
            _kernels.MODE_LINEAR, np.ascontiguousarray(orbit.times), U, dU, w, m, 1, 0, len(orbit) - 1, tol)
        if status != _kernels.OK:
            raise StepSizeUnderflow(f"bundle integration stopped (status {status})")
        J = out
        Jp = np.einsum("kij,kj->ki", U, J)
        method = "bundle"
    base = 0.5 * np.log(np.sum(J * J, axis=1))
    if not np.all(np.isfinite(base)):
        raise SingularY("Jacobi field vanished on the segment")
    return GrowthCurve(orbit.times.copy(), _sasaki_log_norm(J, Jp), bundle_tag, base, method)


def lyapunov_exponent(curve: GrowthCurve, window=None, min_window: float = MIN_WINDOW) -> ExponentEstimate:
    """Least-squares slope of log_norm over ``window`` (default [T/5, T])."""
    t_lo, t_hi = _window(curve.times, window)
    if t_hi - t_lo < min_window:
        raise WindowTooShort(f"window length {t_hi - t_lo:g} < {min_window:g}")
    mask = _window_mask(curve.times, t_lo, t_hi)
    t = curve.times[mask]
    y = curve.log_norm[mask]
    slope, intercept = np.polyfit(t, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * t + intercept)) ** 2)))
    return ExponentEstimate(float(slope), (t_lo, t_hi), resid, "slope_fit",
                            {"bundle": curve.bundle_tag, "nodes": int(mask.sum())})


def det_exponent_via_trace(orbit: OrbitSegment, U_path: MatrixPath, window=None) -> ExponentEstimate:
    """(1/|w|) * integral of tr U over the window (composite Simpson on the node grid)."""
    if len(U_path) != len(orbit) or not np.allclose(U_path.times, orbit.times, rtol=0, atol=1e-9):
        raise GridMismatch("U path grid does not match the orbit grid")
    t_lo, t_hi = (orbit.t0, orbit.t1) if window is None else (float(window[0]), float(window[1]))
    mask = _window_mask(U_path.times, t_lo, t_hi)
    t = U_path.times[mask]
    tr = U_path.trace()[mask]
    val = float(simpson(tr, x=t)) / (t_hi - t_lo)
    # resolution check: the same rule on every other node
    coarse = float(simpson(tr[::2], x=t[::2])) / (t_hi - t_lo) if t.size >= 5 else val
    return ExponentEstimate(val, (t_lo, t_hi), abs(val - coarse), "trace_integral",
                            {"asymmetry": U_path.max_asymmetry()})


def graph_projection_det(U) -> float:
    """|det pi^-1| = sqrt(det(I + U^2)) for the graph of symmetric U."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    return math.sqrt(float(np.linalg.det(np.eye(U.shape[0]) + U @ U)))


def det_exponent_direct(orbit: OrbitSegment, Y_path: MatrixPath, U_lo, U_hi, c: float,
                        window=None) -> ExponentEstimate:
    """(1/|w|) [log|det Y+(t_hi)| - log|det Y+(t_lo)|] with projection bounds.

    The graph-projection factor |det pi^-1| at both ends must lie in
    [1, (1+c^2)^{(n-1)/2}]; its contribution to the Sasaki determinant
    exponent is reported as ``projection_correction``.
    """
    t_lo, t_hi = (orbit.t0, orbit.t1) if window is None else (float(window[0]), float(window[1]))
    mask = _window_mask(Y_path.times, t_lo, t_hi)
    dets = np.linalg.det(Y_path.values[mask])
    if np.any(dets == 0) or np.any(np.sign(dets) != np.sign(dets[0])):
        raise SingularY("det Y+ changes sign on the window: the orbit has conjugate points")
    m = Y_path.values.shape[1]
    length = t_hi - t_lo
    val = float(np.log(abs(dets[-1])) - np.log(abs(dets[0]))) / length
    p_lo, p_hi = graph_projection_det(U_lo), graph_projection_det(U_hi)
    upper = (1.0 + c * c) ** (m / 2.0)
    slack = 1e-9
    bounds_ok = all(1.0 - slack <= p <= upper + slack for p in (p_lo, p_hi))
    return ExponentEstimate(val, (t_lo, t_hi), 0.0, "det_direct", {
        "projection_det": [p_lo, p_hi],
        "projection_upper": upper,
        "projection_bounds_ok": bool(bounds_ok),
        "projection_correction": (math.log(p_hi) - math.log(p_lo)) / length,
    })


def operator_norm_det_bounds(A) -> Tuple[float, float, float]:
    """(|det A^-1|^{-1/m}, ||A||, ||A^-1||^{m-1} / |det A^-1|) with spectral norms."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    m = A.shape[0]
    if A.shape != (m, m):
        raise SingularInput("matrix must be square")
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= s[0] * 1e-14 or s[-1] == 0.0:
        raise SingularInput("matrix is singular to working precision")
    # log domain: products of singular values over/underflow for tiny entries
    log_s = np.log(s)
    lower = math.exp(float(np.mean(log_s)))
    norm = float(s[0])
    upper = math.exp(float(np.sum(log_s) - (m - 1) * log_s[-1]))
    return lower, norm, upper


def operator_norm_det_check(A, rtol: float = 1e-12) -> bool:
    """True iff |det A^-1|^{-1/m} <= ||A|| <= ||A^-1||^{m-1} / |det A^-1|."""
    lower, norm, upper = operator_norm_det_bounds(A)
    slack = rtol * max(1.0, norm)
    return lower <= norm + slack and norm <= upper + slack


def birkhoff_ricci(orbit: OrbitSegment, window=None) -> float:
    """Time average of Ric(gamma') = tr R / (n - 1) over the window (Simpson)."""
    orbit.require_curvature()
    t_lo, t_hi = (orbit.t0, orbit.t1) if window is None else (float(window[0]), float(window[1]))
    mask = _window_mask(orbit.times, t_lo, t_hi)
    ric = np.trace(orbit.R[mask], axis1=1, axis2=2) / orbit.m
    if np.all(ric == ric[0]):
        return float(ric[0])
    return float(simpson(ric, x=orbit.times[mask])) / (t_hi - t_lo)


@dataclass
class RSeries:
    times: np.ndarray
    r: np.ndarray
    bound: float
    lam: float

    @property
    def exceeds_at(self) -> Optional[float]:
        idx = np.nonzero(self.r > self.bound)[0]
        return float(self.times[idx[0]]) if idx.size else None

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.r) / self.bound)

    def min_increment(self) -> float:
        return float(np.min(np.diff(self.r))) if self.r.size > 1 else 0.0

    def to_csv(self, target=None) -> str:
        buf = io.StringIO()
        buf.write(f"# schema={R_CSV_SCHEMA} lambda={self.lam!r} bound={self.bound!r}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "r"])
        for row in zip(self.times, self.r):
            w.writerow([repr(float(x)) for x in row])
        text = buf.getvalue()
        if target is not None:
            with open(target, "w", newline="") as fh:
                fh.write(text)
        return text


def r_diagnostic(stable: GrowthCurve, unstable: GrowthCurve, lam: float, c: float) -> RSeries:
    """r(t) = lam^{-2t} |J_s(t)| / |J_u(t)| with the bound sqrt(1+c^2) |xi| / |eta|.

    |J| is the base component; |xi|, |eta| are Sasaki norms at t = 0.
    """
    if stable.times.shape != unstable.times.shape or not np.allclose(stable.times, unstable.times):
        raise GridMismatch("stable and unstable curves must share a grid")
    t = stable.times - stable.times[0]
    log_r = -2.0 * t * math.log(lam) + stable.log_base - unstable.log_base
    bound = math.sqrt(1.0 + c * c) * math.exp(stable.log_norm[0] - unstable.log_norm[0])
    return RSeries(stable.times.copy(), np.exp(log_r), bound, lam)


# ---------------------------------------------------------------------------
# per-point pipeline
# ---------------------------------------------------------------------------

@dataclass
class PointAnalysis:
    theta: UnitTangentState
    orbit: OrbitSegment
    unstable: GreenLimitResult
    stable_end: GreenLimitResult
    U_plus_path: MatrixPath
    U_minus_path: MatrixPath
    Y_plus: MatrixPath
    stable_curve: GrowthCurve
    unstable_curve: GrowthCurve
    chi_u: ExponentEstimate
    chi_s: ExponentEstimate
    stable_direct: Optional[GreenLimitResult] = None

    @property
    def U_plus(self):
        return self.unstable.U_plus

    @property
    def U_minus(self):
        return self.U_minus_path.values[0]

    def det_trace(self, window=None) -> ExponentEstimate:
        return det_exponent_via_trace(self.orbit, self.U_plus_path, window)

    def det_direct(self, c, window=None) -> ExponentEstimate:
        t_lo, t_hi = (self.orbit.t0, self.orbit.t1) if window is None else window
        return det_exponent_direct(self.orbit, self.Y_plus, self.U_plus_path.at(t_lo),
                                   self.U_plus_path.at(t_hi), c, window)

    def r(self, lam, c) -> RSeries:
        return r_diagnostic(self.stable_curve, self.unstable_curve, lam, c)

    def green_norms(self) -> List[float]:
        out = [float(np.linalg.norm(self.unstable.U_plus, 2)), float(np.linalg.norm(self.stable_end.U_plus, 2))]
        if self.stable_direct is not None:
            out.append(float(np.linalg.norm(self.stable_direct.U_plus, 2)))
        return out


def analyze_point(model: MetricModel, theta: UnitTangentState, T: float, c: float,
                  orbit_tol: float = 1e-11, green_tol: float = 1e-8, ode_tol: float = 1e-11,
                  dense_dt: float = 0.05, window=None, check_stable: bool = False) -> PointAnalysis:
    """Everything the estimators need at one base point, on one orbit [0, T].

    U+ comes from Green's limit at theta and is pushed forward by the
    Riccati flow; U- comes from Green's limit (time-reversed) at phi^T theta
    and is pulled back by the Riccati flow, the attracting direction for
    each. ``check_stable`` additionally computes U-(theta) directly.
    """
    orbit = integrate_geodesic(model, theta, T, tol=orbit_tol, dense_dt=dense_dt)
    if not orbit.complete:
        raise NoConvergence(f"orbit left the chart at t={orbit.t1:g}", T=T)
    m = orbit.m
    F0 = orbit.frames[0]
    unstable = unstable_at(model, theta, c, tol=green_tol, orbit_tol=orbit_tol, frame0=F0)
    stable_end = stable_at(model, orbit.state(len(orbit) - 1), c, tol=green_tol, orbit_tol=orbit_tol,
                           frame0=orbit.frames[-1])
    U_plus_path = riccati_flow(orbit, unstable.U_plus, tol=ode_tol)
    U_minus_path = riccati_flow(orbit, stable_end.U_plus, tol=ode_tol, t_start=orbit.t1, t_end=orbit.t0)
    Y_plus = solve_jacobi_ivp(orbit, np.eye(m), unstable.U_plus, tol=ode_tol)
    w = np.zeros(m)
    w[0] = 1.0
    stable_curve = tangent_growth(orbit, U_minus_path.values[0], w, "stable", tol=ode_tol, U_path=U_minus_path)
    unstable_curve = tangent_growth(orbit, unstable.U_plus, w, "unstable", tol=ode_tol)
    stable_direct = None
    if check_stable:
        stable_direct = stable_at(model, theta, c, tol=green_tol, orbit_tol=orbit_tol, frame0=F0)
    return PointAnalysis(
        theta=theta,
        orbit=orbit,
        unstable=unstable,
        stable_end=stable_end,
        U_plus_path=U_plus_path,
        U_minus_path=U_minus_path,
        Y_plus=Y_plus,
        stable_curve=stable_curve,
        unstable_curve=unstable_curve,
        chi_u=lyapunov_exponent(unstable_curve, window),
        chi_s=lyapunov_exponent(stable_curve, window),
        stable_direct=stable_direct,
    )


@dataclass
class ContractionEstimate:
    lambda_hat: float
    per_point_rates: List[Tuple[dict, float]]
    sample_spec: dict
    worst_point: Optional[dict]
    skipped: List[dict] = field(default_factory=list)

    def to_dict(self):
        return {
            "lambda_hat": self.lambda_hat,
            "log_lambda_hat": math.log(self.lambda_hat) if self.lambda_hat > 0 else None,
            "per_point_rates": [{"theta": th, "rate": r} for th, r in self.per_point_rates],
            "sample_spec": self.sample_spec,
            "worst_point": self.worst_point,
            "skipped": self.skipped,
        }


def _analyze_job(args):
    model, theta, T, c, kw = args
    try:
        return analyze_point(model, theta, T, c, **kw), None
    except NoConvergence as exc:
        return None, str(exc)


def analyze_grid(model: MetricModel, thetas: Sequence[UnitTangentState], T: float, c: float,
                 jobs: int = 1, **kw):
    """analyze_point over a grid; returns (analyses, skipped) in grid order."""
    tasks = [(model, th, T, c, kw) for th in thetas]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_analyze_job, tasks))
    else:
        results = [_analyze_job(t) for t in tasks]
    analyses, skipped = [], []
    for th, (res, err) in zip(thetas, results):
        if res is None:
            log.warning("skipping %s: %s", th.to_dict(), err)
            skipped.append({"theta": th.to_dict(), "reason": err})
        else:
            analyses.append(res)
    return analyses, skipped


def gate_fits(analyses: Sequence[PointAnalysis], residual_max: float):
    """Split analyses into (accepted, rejected) by the stable-fit RMS residual."""
    kept, rejected = [], []
    for a in analyses:
        if a.chi_s.residual > residual_max:
            log.warning("rejecting fit at %s: residual %.3e > %.1e", a.theta.to_dict(), a.chi_s.residual, residual_max)
            rejected.append({"theta": a.theta.to_dict(),
                             "reason": f"fit residual {a.chi_s.residual:.3e} > {residual_max:g}"})
        else:
            kept.append(a)
    return kept, rejected


def contraction_from_analyses(analyses: Sequence[PointAnalysis], skipped, sample_spec,
                              max_skip_fraction: float = 0.1) -> ContractionEstimate:
    total = len(analyses) + len(skipped)
    if total == 0 or not analyses:
        raise NoConvergence("no grid point produced an accepted estimate")
    if len(skipped) > max_skip_fraction * total:
        raise NoConvergence(f"{len(skipped)} of {total} grid points failed to converge")
    rates = [(a.theta.to_dict(), a.chi_s.value) for a in analyses]
    k = int(np.argmax([r for _, r in rates]))
    return ContractionEstimate(
        lambda_hat=math.exp(rates[k][1]),
        per_point_rates=rates,
        sample_spec=dict(sample_spec),
        worst_point=rates[k][0],
        skipped=list(skipped),
    )


def contraction_constant(model: MetricModel, thetas: Sequence[UnitTangentState], T: float,
                         window=None, c: Optional[float] = None, jobs: int = 1,
                         sample_spec: Optional[dict] = None, residual_max: Optional[float] = 1e-3,
                         **kw) -> ContractionEstimate:
    """lambda_hat = exp(max over the grid of the fitted stable rate).

    Points whose stable fit has RMS residual above ``residual_max`` are
    skipped like non-converged points; more than 10% skipped fails the run.
    """
    if T < 2 * MIN_WINDOW:
        raise WindowTooShort(f"T = {T:g} is shorter than twice the minimum window")
    if c is None:
        from .metric_models import curvature_bounds
        c = curvature_bounds(model).c
    analyses, skipped = analyze_grid(model, thetas, T, c, jobs=jobs, window=window, **kw)
    if residual_max is not None:
        analyses, rejected = gate_fits(analyses, residual_max)
        skipped = skipped + rejected
    spec = sample_spec or {"points": len(thetas), "T": T}
    return contraction_from_analyses(analyses, skipped, spec)
