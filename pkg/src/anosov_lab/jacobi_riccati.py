"""Matrix Jacobi and Riccati equations along orbit curvature data.

Everything here consumes an :class:`OrbitSegment` with curvature samples;
``R(t)`` between nodes is the cubic Hermite interpolant built from the
node values and node derivatives.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from . import _kernels
from .errors import BlowUp, ChartExit, ConjugatePointOnSegment, GridMismatch, NoConvergence, StepSizeUnderflow
from .geodesic_flow import OrbitSegment, UnitTangentState, integrate_geodesic

log = logging.getLogger(__name__)

MATRIX_CSV_SCHEMA = "matrix-path/1"
GREEN_CSV_SCHEMA = "green-limit/1"
DET_THRESHOLD = 1e-10


@dataclass
class MatrixPath:
    """Matrices sampled on (part of) an orbit grid, in increasing time."""

    times: np.ndarray
    values: np.ndarray
    derivative_values: Optional[np.ndarray] = None
    kind: str = "jacobi"
    diagnostics: dict = field(default_factory=dict)

    def __len__(self):
        return self.times.shape[0]

    def index_of(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise GridMismatch(f"no node at t={t} (nearest {self.times[k]})")
        return k

    def at(self, t: float) -> np.ndarray:
        return self.values[self.index_of(t)]

    def derivative_at(self, t: float) -> np.ndarray:
        if self.derivative_values is None:
            raise GridMismatch("path carries no derivative values")
        return self.derivative_values[self.index_of(t)]

    def trace(self) -> np.ndarray:
        return np.trace(self.values, axis1=1, axis2=2)

    def max_asymmetry(self) -> float:
        if self.values.shape[1] != self.values.shape[2]:
            return float("nan")
        return float(np.max(np.abs(self.values - np.swapaxes(self.values, 1, 2))))

    def to_csv(self, target=None) -> str:
        m, q = self.values.shape[1:]
        cols = ["t"] + [f"{self.kind[0].upper()}{i}{j}" for i in range(m) for j in range(q)]
        if self.derivative_values is not None:
            cols += [f"D{i}{j}" for i in range(m) for j in range(q)]
        buf = io.StringIO()
        buf.write(f"# schema={MATRIX_CSV_SCHEMA} kind={self.kind}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for k in range(len(self)):
            row = [self.times[k], *self.values[k].ravel()]
            if self.derivative_values is not None:
                row += list(self.derivative_values[k].ravel())
            w.writerow([repr(float(x)) for x in row])
        text = buf.getvalue()
        if target is not None:
            with open(target, "w", newline="") as fh:
                fh.write(text)
        return text


def _coefficients(orbit: OrbitSegment):
    orbit.require_curvature()
    if len(orbit) > 1 and np.any(np.diff(orbit.times) <= 0):
        raise GridMismatch("orbit grid must be strictly increasing (use OrbitSegment.ascending)")
    return (np.ascontiguousarray(orbit.times, dtype=float),
            np.ascontiguousarray(orbit.R, dtype=float),
            np.ascontiguousarray(orbit.dR, dtype=float))


def _span(orbit: OrbitSegment, t_start, t_end):
    i = 0 if t_start is None else orbit.index_of(t_start)
    j = len(orbit) - 1 if t_end is None else orbit.index_of(t_end)
    return i, j


def _collect(out, i, j):
    lo, hi = min(i, j), max(i, j)
    return out[lo:hi + 1]


def _as_matrix(a, m):
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(m, -1)
    return a


def _jacobi_raw(orbit, Y0, P0, tol, i, j):
    times, R, dR = _coefficients(orbit)
    m = orbit.m
    q = Y0.shape[1]
    state0 = np.concatenate([Y0.ravel(), P0.ravel()])
    out, status, last, stats = _kernels.linear_nodes(
        _kernels.MODE_JACOBI, times, R, dR, state0, m, q, i, j, tol)
    if status == _kernels.STEP_UNDERFLOW:
        raise StepSizeUnderflow(f"Jacobi integration stalled at t={stats[3]:.6g}")
    if status != _kernels.OK:
        raise StepSizeUnderflow(f"Jacobi integration stopped (status {status}) at t={stats[3]:.6g}")
    block = _collect(out, i, j)
    t = times[min(i, j):max(i, j) + 1]
    Y = block[:, :m * q].reshape(-1, m, q)
    P = block[:, m * q:].reshape(-1, m, q)
    return t, Y, P, stats


def solve_jacobi_ivp(orbit: OrbitSegment, Y0, Y0p, tol: float = 1e-10,
                     t_start: Optional[float] = None, t_end: Optional[float] = None) -> MatrixPath:
    """Solve Y'' + R(t) Y = 0 with Y(t_start) = Y0, Y'(t_start) = Y0p.

    Defaults integrate from the first to the last node; ``t_end`` before
    ``t_start`` integrates backwards. ``Y0`` may be m x q (q columns are
    independent Jacobi fields).
    """
    m = orbit.m
    Y0 = _as_matrix(Y0, m)
    P0 = _as_matrix(Y0p, m)
    if Y0.shape != P0.shape or Y0.shape[0] != m:
        raise ValueError(f"initial data must be {m} x q matrices of equal shape")
    i, j = _span(orbit, t_start, t_end)
    t, Y, P, stats = _jacobi_raw(orbit, Y0, P0, tol, i, j)
    return MatrixPath(t, Y, P, kind="jacobi",
                      diagnostics={"accepted_steps": int(stats[0]), "rejected_steps": int(stats[1]), "tol": tol})


def wronskian(a: MatrixPath, b: MatrixPath) -> np.ndarray:
    """Y_a^T P_b - P_a^T Y_b at every node; constant for solutions on one orbit."""
    Ya, Pa, Yb, Pb = a.values, a.derivative_values, b.values, b.derivative_values
    return np.einsum("kji,kjl->kil", Ya, Pb) - np.einsum("kji,kjl->kil", Pa, Yb)


def green_bvp(orbit: OrbitSegment, tol: float = 1e-10, s: Optional[float] = None,
              t0: float = 0.0) -> MatrixPath:
    """Jacobi solution with Y(s) = 0 and Y(t0) = I on an orbit covering [s, t0].

    Uses Z(s) = 0, Z'(s) = I and returns Y = Z Z(t0)^-1; the Riccati datum
    U_s = Y'(t0) is stored in ``diagnostics['U_s']``.
    """
    m = orbit.m
    s = orbit.t0 if s is None else s
    i, j = orbit.index_of(s), orbit.index_of(t0)
    t, Z, Zp, stats = _jacobi_raw(orbit, np.zeros((m, m)), np.eye(m), tol, i, j)
    k0 = int(np.argmin(np.abs(t - t0)))
    Z0 = Z[k0]
    scale = max(1.0, float(np.max(np.abs(Z)))) ** m
    det = float(np.linalg.det(Z0))
    if abs(det) < DET_THRESHOLD * scale:
        raise ConjugatePointOnSegment(
            f"det Z({t0:g}) = {det:.3e} below threshold on [{s:g}, {t0:g}]: conjugate points", det=det)
    Z0inv = np.linalg.inv(Z0)
    Y = Z @ Z0inv
    P = Zp @ Z0inv
    U_s = P[k0]
    return MatrixPath(t, Y, P, kind="jacobi", diagnostics={
        "U_s": 0.5 * (U_s + U_s.T),
        "det_Z0": det,
        "residual_start": float(np.max(np.abs(Y[0 if i < j else -1]))),
        "residual_end": float(np.max(np.abs(Y[k0] - np.eye(m)))),
        "accepted_steps": int(stats[0]),
        "tol": tol,
    })


@dataclass
class GreenLimitResult:
    U_plus: np.ndarray
    T_back_used: float
    cauchy_gap: float
    converged: bool
    history: list = field(default_factory=list)
    c: float = float("nan")
    tol: float = 1e-8
    curvature_max_eig: float = float("nan")
    green_bound_ok: bool = True

    def to_dict(self):
        return {
            "U_plus": self.U_plus.tolist(),
            "T_back_used": self.T_back_used,
            "cauchy_gap": self.cauchy_gap,
            "converged": self.converged,
            "c": self.c,
            "tol": self.tol,
            "curvature_max_eig": self.curvature_max_eig,
            "green_bound_ok": self.green_bound_ok,
            "history": [{"T": T, "U": U.tolist(), "gap": g} for T, U, g in self.history],
        }

    def to_csv(self, target=None) -> str:
        """One row per doubling: T_back, U entries, Cauchy gap."""
        m = self.U_plus.shape[0]
        buf = io.StringIO()
        buf.write(f"# schema={GREEN_CSV_SCHEMA}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["T_back"] + [f"U{i}{j}" for i in range(m) for j in range(m)] + ["cauchy_gap"])
        for T, U, gap in self.history:
            w.writerow([repr(float(T))] + [repr(float(x)) for x in U.ravel()] + [repr(float(gap))])
        text = buf.getvalue()
        if target is not None:
            with open(target, "w", newline="") as fh:
                fh.write(text)
        return text


def green_limit(extender: Callable[[float], OrbitSegment], c: float, tol: float = 1e-8,
                T_init: Optional[float] = None, T_max: Optional[float] = None,
                bvp_tol: float = 1e-11) -> GreenLimitResult:
    """U+ at t = 0 as the limit of U_s for s -> -inf.

    ``extender(T)`` returns an increasing-time orbit covering [-T, 0].
    T doubles from ``T_init`` (default 5/c) until the Cauchy gap
    ||U_{-T} - U_{-T/2}|| is at most ``tol``; NoConvergence past ``T_max``
    (default 200/c).
    """
    if c <= 0:
        raise ValueError("c must be positive")
    T = 5.0 / c if T_init is None else float(T_init)
    T_max = 200.0 / c if T_max is None else float(T_max)
    history = []
    prev = None
    gap = float("inf")
    max_eig = float("nan")
    while True:
        orbit = extender(T)
        U = green_bvp(orbit, tol=bvp_tol, s=-T, t0=0.0).diagnostics["U_s"]
        seg_R = orbit.slice(-T, 0.0).R
        max_eig = float(np.max(np.linalg.eigvalsh(seg_R)))
        if prev is not None:
            gap = float(np.linalg.norm(U - prev, 2))
        history.append((T, U, gap))
        log.debug("green_limit T=%g gap=%.3e", T, gap)
        if gap <= tol:
            break
        if 2 * T > T_max:
            raise NoConvergence(f"Cauchy gap {gap:.3e} > {tol:g} at T_back={T:g} (T_max={T_max:g})",
                                gap=gap, T=T)
        prev = U
        T *= 2
    norm = float(np.linalg.norm(U, 2))
    ok = norm <= c + tol
    if not ok:
        log.warning("Green bound violated: ||U+|| = %.9g > c = %.9g", norm, c)
    return GreenLimitResult(U_plus=U, T_back_used=T, cauchy_gap=gap, converged=True,
                            history=history, c=c, tol=tol, curvature_max_eig=max_eig,
                            green_bound_ok=ok)


def backward_extender(model, theta: UnitTangentState, tol: float = 1e-11, frame0=None,
                      dense_dt: Optional[float] = None, h_max: float = 0.1):
    """Extender for :func:`green_limit`: the orbit of ``theta`` on [-T, 0].

    The longest orbit computed so far is cached and sliced for shorter T.
    """
    cache = {}

    def extend(T):
        seg = cache.get("seg")
        if seg is None or seg.t0 > -T + 1e-12:
            seg = integrate_geodesic(model, theta, -T, tol=tol, dense_dt=dense_dt,
                                     dense_times=[-T], frame0=frame0, h_max=h_max).ascending()
            if not seg.complete:
                raise ChartExit(f"backward orbit left the chart before T={T:g}", segment=seg)
            cache["seg"] = seg
        return seg.slice(-T, 0.0)

    return extend


def flipped(theta: UnitTangentState) -> UnitTangentState:
    return UnitTangentState(theta.p, -theta.v)


def unstable_at(model, theta: UnitTangentState, c: float, tol: float = 1e-8,
                orbit_tol: float = 1e-11, frame0=None, **kw) -> GreenLimitResult:
    """Green's U+ at ``theta``."""
    return green_limit(backward_extender(model, theta, tol=orbit_tol, frame0=frame0), c, tol=tol, **kw)


def stable_at(model, theta: UnitTangentState, c: float, tol: float = 1e-8,
              orbit_tol: float = 1e-11, frame0=None, **kw) -> GreenLimitResult:
    """U- at ``theta``: minus U+ of the flipped vector (the time-reversed orbit).

    The returned ``U_plus`` field holds U- itself.
    """
    res = green_limit(backward_extender(model, flipped(theta), tol=orbit_tol, frame0=frame0), c, tol=tol, **kw)
    res.U_plus = -res.U_plus
    res.history = [(T, -U, g) for T, U, g in res.history]
    return res


def riccati_flow(orbit: OrbitSegment, U0, tol: float = 1e-10, t_start: Optional[float] = None,
                 t_end: Optional[float] = None, ceiling: float = 1e8) -> MatrixPath:
    """Integrate U' + U^2 + R = 0 from ``t_start`` to ``t_end`` (either direction).

    U is symmetrized after each accepted step; the largest asymmetry seen
    is in ``diagnostics``. Raises BlowUp when max |U_ij| exceeds ``ceiling``.
    """
    m = orbit.m
    U0 = _as_matrix(U0, m)
    if U0.shape != (m, m):
        raise ValueError(f"U0 must be {m} x {m}")
    if not np.allclose(U0, U0.T, atol=1e-12):
        raise ValueError("U0 must be symmetric")
    times, R, dR = _coefficients(orbit)
    i, j = _span(orbit, t_start, t_end)
    out, status, last, stats = _kernels.linear_nodes(
        _kernels.MODE_RICCATI, times, R, dR, U0.ravel(), m, m, i, j, tol, ceiling)
    if status == _kernels.BLOWUP:
        raise BlowUp(f"Riccati solution exceeded {ceiling:g} near t={stats[3]:.6g}", time=float(stats[3]))
    if status != _kernels.OK:
        raise StepSizeUnderflow(f"Riccati integration stopped (status {status}) at t={stats[3]:.6g}")
    block = _collect(out, i, j)
    t = times[min(i, j):max(i, j) + 1]
    return MatrixPath(t, block.reshape(-1, m, m), kind="riccati", diagnostics={
        "max_asymmetry": float(stats[2]), "accepted_steps": int(stats[0]), "tol": tol})


def _hermite_value_slope(t, t0, t1, A0, A1, D0, D1):
    H = t1 - t0
    s = (t - t0) / H
    val = ((2 * s**3 - 3 * s**2 + 1) * A0 + (s**3 - 2 * s**2 + s) * H * D0
           + (-2 * s**3 + 3 * s**2) * A1 + (s**3 - s**2) * H * D1)
    slope = ((6 * s**2 - 6 * s) * A0 / H + (3 * s**2 - 4 * s + 1) * D0
             + (-6 * s**2 + 6 * s) * A1 / H + (3 * s**2 - 2 * s) * D1)
    return val, slope


def detect_conjugate_points(orbit: OrbitSegment, tol: float = 1e-10,
                            locate_tol: float = 1e-9) -> List[float]:
    """Times t > t0 where det Y changes sign for Y(t0) = 0, Y'(t0) = I.

    Each bracketing node interval is refined by bisection down to
    ``locate_tol``. Even-multiplicity touches are not reported.
    """
    m = orbit.m
    times, R, dR = _coefficients(orbit)
    if len(orbit) < 2:
        return []
    path = solve_jacobi_ivp(orbit, np.zeros((m, m)), np.eye(m), tol=tol)
    dets = np.linalg.det(path.values)
    found = []
    # skip the trivial zero at t0; start from the first node with a clear sign
    for k in range(1, len(dets) - 1):
        if dets[k] == 0.0:
            found.append(float(times[k]))
            continue
        if dets[k] * dets[k + 1] >= 0:
            continue
        a, b = times[k], times[k + 1]
        Ya, Pa = path.values[k], path.derivative_values[k]
        A0, A1, D0, D1 = R[k], R[k + 1], dR[k], dR[k + 1]
        sign_a = math.copysign(1.0, dets[k])
        lo = a
        while b - lo > locate_tol:
            mid = 0.5 * (lo + b)
            Am, Dm = _hermite_value_slope(mid, a, times[k + 1], A0, A1, D0, D1)
            sub = OrbitSegment(
                times=np.array([a, mid]),
                positions=np.zeros((2, m + 1)),
                velocities=np.zeros((2, m + 1)),
                R=np.stack([A0, Am]),
                dR=np.stack([D0, Dm]),
            )
            # the Hermite cubic restricted to [a, mid] is the same cubic
            t_s, Y_s, _, _ = _jacobi_raw(sub, Ya, Pa, tol, 0, 1)
            if math.copysign(1.0, np.linalg.det(Y_s[-1])) == sign_a:
                lo = mid
            else:
                b = mid
        found.append(float(0.5 * (lo + b)))
    return found


def constant_curvature_orbit(R_value, T: float, dt: float = 0.05, t0: float = 0.0) -> OrbitSegment:
    """Synthetic orbit carrying only the constant curvature matrix ``R_value``.

    Useful for closed-form checks (R = -1, 0, +1) without a metric model.
    """
    R_value = np.atleast_2d(np.asarray(R_value, dtype=float))
    m = R_value.shape[0]
    K = max(2, int(round(abs(T) / dt)) + 1)
    times = np.linspace(t0, t0 + T, K) if T >= 0 else np.linspace(t0 + T, t0, K)
    return OrbitSegment(
        times=times,
        positions=np.zeros((K, m + 1)),
        velocities=np.zeros((K, m + 1)),
        R=np.repeat(R_value[None], K, axis=0),
        dR=np.zeros((K, m, m)),
        model_label="constant-R",
    )
