"""Unit-speed geodesics, parallel normal frames and Sasaki-metric norms.

Orbits are integrated together with a parallel orthonormal frame of the
normal bundle, so ``R(t)`` is read off node by node. Built-in 2-D models
go through the compiled kernel; anything else uses the generic driver.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _kernels
from .errors import (
    ChartExit,
    DerivativeUnavailable,
    GridMismatch,
    PointOutsideChart,
    SeparationTooLarge,
    StepSizeUnderflow,
)
from .metric_models import MetricModel, curvature_matrix

log = logging.getLogger(__name__)

ORBIT_CSV_SCHEMA = "orbit/1"
NODE_ATOL = 1e-9


@dataclass(frozen=True)
class UnitTangentState:
    """A point ``theta = (p, v)`` of the unit tangent bundle (chart components)."""

    p: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))

    def speed_error(self, model: MetricModel) -> float:
        g = model.metric_tensor(self.p)
        return abs(float(self.v @ g @ self.v) - 1.0)

    def to_dict(self):
        return {"p": self.p.tolist(), "v": self.v.tolist()}


def unit_state(model: MetricModel, p, direction) -> UnitTangentState:
    """Rescale ``direction`` to unit length at ``p``."""
    p = model.check_point(p)
    d = np.asarray(direction, dtype=float)
    g = model.metric_tensor(p)
    return UnitTangentState(p, d / math.sqrt(float(d @ g @ d)))


def state_at_angle(model: MetricModel, p, angle: float) -> UnitTangentState:
    """Unit vector at ``p`` making ``angle`` with the first g-orthonormal axis (2-D)."""
    p = model.check_point(p)
    g = model.metric_tensor(p)
    e0 = np.array([1.0, 0.0]) / math.sqrt(g[0, 0])
    e1 = np.array([0.0, 1.0]) - (g[0, 1] * e0[0]) * e0
    e1 = e1 / math.sqrt(float(e1 @ g @ e1))
    return UnitTangentState(p, math.cos(angle) * e0 + math.sin(angle) * e1)


def normal_frame(model: MetricModel, p, v) -> np.ndarray:
    """g-orthonormal basis of the complement of v, as columns (n x n-1).

    For n = 2 the normal is v rotated by +90 degrees.
    """
    g = model.metric_tensor(p)
    n = model.dim
    v = np.asarray(v, dtype=float)
    if n == 2:
        candidates = [np.array([-v[1], v[0]])]
    else:
        candidates = list(np.eye(n))
    basis = [v]
    for w in candidates:
        for b in basis:
            w = w - float(w @ g @ b) / float(b @ g @ b) * b
        nrm = math.sqrt(max(float(w @ g @ w), 0.0))
        if nrm > 1e-8:
            basis.append(w / nrm)
        if len(basis) == n:
            break
    return np.stack(basis[1:], axis=1)


@dataclass
class OrbitSegment:
    """Time-sampled geodesic with parallel frame and curvature matrices.

    ``frames[k]`` holds the frame vectors as columns (n x n-1);
    ``R[k]`` is the (n-1) x (n-1) curvature matrix and ``dR[k]`` its
    time derivative.
    """

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    frames: Optional[np.ndarray] = None
    R: Optional[np.ndarray] = None
    dR: Optional[np.ndarray] = None
    model_label: str = ""
    settings: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    complete: bool = True

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def m(self) -> int:
        return self.dim - 1

    def __len__(self):
        return self.times.shape[0]

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t1(self) -> float:
        return float(self.times[-1])

    def state(self, k: int) -> UnitTangentState:
        return UnitTangentState(self.positions[k], self.velocities[k])

    def index_of(self, t: float) -> int:
        """Index of the node at time ``t``; GridMismatch if there is none."""
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > NODE_ATOL * max(1.0, abs(t)):
            raise GridMismatch(f"no orbit node at t={t} (nearest {self.times[k]})")
        return k

    def require_curvature(self):
        if self.R is None or self.dR is None:
            raise GridMismatch("orbit has no curvature samples; run transport_frame first")

    def slice(self, t_a: float, t_b: float) -> "OrbitSegment":
        """Nodes with t_a <= t <= t_b (endpoints must be nodes)."""
        i, j = self.index_of(t_a), self.index_of(t_b)
        if i > j:
            i, j = j, i
        sl = slice(i, j + 1)
        return replace(
            self,
            times=self.times[sl],
            positions=self.positions[sl],
            velocities=self.velocities[sl],
            frames=None if self.frames is None else self.frames[sl],
            R=None if self.R is None else self.R[sl],
            dR=None if self.dR is None else self.dR[sl],
        )

    def shifted(self, dt: float) -> "OrbitSegment":
        return replace(self, times=self.times + dt)

    def ascending(self) -> "OrbitSegment":
        """Same nodes ordered by increasing time (backward integrations come out descending)."""
        if len(self) < 2 or self.times[-1] >= self.times[0]:
            return self
        def flip(a):
            return None if a is None else a[::-1]
        return replace(
            self,
            times=self.times[::-1],
            positions=self.positions[::-1],
            velocities=self.velocities[::-1],
            frames=flip(self.frames),
            R=flip(self.R),
            dR=flip(self.dR),
        )

    def reversed(self, about: float = 0.0) -> "OrbitSegment":
        """The same geodesic run backwards: t -> about - t, v -> -v.

        Frames stay parallel, ``R`` is even in the velocity, ``dR`` flips sign.
        """
        def rev(a, sign=1.0):
            return None if a is None else sign * a[::-1]
        return replace(
            self,
            times=(about - self.times)[::-1],
            positions=self.positions[::-1],
            velocities=-self.velocities[::-1],
            frames=rev(self.frames),
            R=rev(self.R),
            dR=rev(self.dR, -1.0),
        )

    def to_csv(self, target=None) -> str:
        """CSV with a schema comment line and a header naming every column.

        Columns: t, x0..x{n-1}, v0..v{n-1}, V{i}_{k} (frame vector i,
        component k), R{i}{j} row-major.
        """
        n, m = self.dim, self.m
        cols = ["t"] + [f"x{k}" for k in range(n)] + [f"v{k}" for k in range(n)]
        if self.frames is not None:
            cols += [f"V{i}_{k}" for i in range(m) for k in range(n)]
        if self.R is not None:
            cols += [f"R{i}{j}" for i in range(m) for j in range(m)]
        buf = io.StringIO()
        buf.write(f"# schema={ORBIT_CSV_SCHEMA} model={self.model_label}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for k in range(len(self)):
            row = [self.times[k], *self.positions[k], *self.velocities[k]]
            if self.frames is not None:
                row += list(self.frames[k].T.ravel())
            if self.R is not None:
                row += list(self.R[k].ravel())
            w.writerow([repr(float(x)) for x in row])
        text = buf.getvalue()
        if target is not None:
            with open(target, "w", newline="") as fh:
                fh.write(text)
        return text


def _dense_stops(T: float, dense_dt: Optional[float], dense_times) -> np.ndarray:
    stops = []
    if dense_dt:
        nsteps = int(math.floor(abs(T) / dense_dt + 1e-9))
        stops.extend(math.copysign(k * dense_dt, T) for k in range(1, nsteps + 1))
    if dense_times is not None:
        stops.extend(float(t) for t in dense_times)
    stops = sorted(set(s for s in stops if 0.0 < s * math.copysign(1.0, T) < abs(T)),
                   key=lambda s: abs(s))
    return np.array(stops, dtype=float)


def _generic_integrate(model, y0, T, tol, h_max, stops):
    n = model.dim
    edge = {"hit": False}

    def rhs(t, s):
        x, v = s[:n], s[n:2 * n]
        V = s[2 * n:].reshape(n, n - 1)
        try:
            G = model._christoffel_unchecked(x)
        except (DerivativeUnavailable, PointOutsideChart):
            # stage point outside the evaluable chart: reject the step
            edge["hit"] = True
            return np.full(s.shape, np.nan)
        a = -np.einsum("kij,i,j->k", G, v, v)
        dV = -np.einsum("kij,i,jl->kl", G, v, V)
        return np.concatenate([v, a, dV.ravel()])

    def post(s):
        x, v = s[:n], s[n:2 * n]
        V = s[2 * n:].reshape(n, n - 1).copy()
        g = model._metric_unchecked(x)
        vv = float(v @ g @ v)
        speed_drift = abs(vv - 1.0)
        v = v / math.sqrt(vv)
        gram = np.block([[np.array([[1.0]]), (v @ g @ V)[None, :]], [(V.T @ g @ v)[:, None], V.T @ g @ V]])
        frame_drift = float(np.max(np.abs(gram[1:, :] - np.eye(n)[1:, :])))
        for i in range(n - 1):
            w = V[:, i] - float(V[:, i] @ g @ v) * v
            for j in range(i):
                w = w - float(w @ g @ V[:, j]) * V[:, j]
            V[:, i] = w / math.sqrt(float(w @ g @ w))
        return np.concatenate([x, v, V.ravel()]), (speed_drift, frame_drift)

    def inside(s):
        return bool(np.all(np.isfinite(s))) and model.in_domain(s[:n])

    times, states, status, stats = _kernels.dopri_integrate(
        rhs, y0, 0.0, T, tol, h_max, stops=list(stops), post_step=post, in_domain=inside)
    if status == _kernels.STEP_UNDERFLOW and edge["hit"]:
        status = _kernels.CHART_EXIT
    if len(stats) == 2:
        stats = list(stats) + [0.0, 0.0]
    return times, states, status, np.asarray(stats, dtype=float)


def _curvature_samples(model, positions, velocities, frames, times):
    K = positions.shape[0]
    m = model.dim - 1
    if model.dim == 2:
        if model.constant_curvature is not None:
            R = np.full((K, 1, 1), float(model.constant_curvature))
            return R, np.zeros_like(R)
        if hasattr(model, "curvature_field"):
            vals = np.asarray(model.curvature_field(positions[:, 0], positions[:, 1]), dtype=float)
        else:
            vals = np.array([model.gaussian_curvature(p) for p in positions])
        if hasattr(model, "curvature_rate_field"):
            rates = model.curvature_rate_field(positions[:, 0], positions[:, 1],
                                               velocities[:, 0], velocities[:, 1])
        else:
            rates = np.array([model.curvature_rate(p, v) for p, v in zip(positions, velocities)])
        return vals.reshape(K, 1, 1), rates.reshape(K, 1, 1)
    R = np.stack([curvature_matrix(model, p, v, F) for p, v, F in zip(positions, velocities, frames)])
    if K > 2:
        dR = np.gradient(R, times, axis=0, edge_order=2)
    elif K == 2:
        dR = np.repeat(((R[1] - R[0]) / (times[1] - times[0]))[None], 2, axis=0)
    else:
        dR = np.zeros_like(R)
    if model.constant_curvature is not None:
        dR = np.zeros_like(R)
    return R, dR


def integrate_geodesic(model: MetricModel, theta0: UnitTangentState, T: float,
                       tol: float = 1e-10, dense_dt: Optional[float] = 0.05,
                       dense_times=None, frame0=None, h_max: float = 0.1,
                       strict: bool = False) -> OrbitSegment:
    """Integrate the geodesic from ``theta0`` for time ``T`` (may be negative).

    Nodes are the accepted steps, which are clipped to land on every dense
    output time (multiples of ``dense_dt`` plus ``dense_times``). Speed and
    frame are renormalized after each accepted step; the largest correction
    is kept in ``diagnostics``.

    On a chart exit the partial segment is returned with ``complete=False``
    (or ChartExit is raised when ``strict``).
    """
    p0 = model.check_point(theta0.p)
    v0 = np.asarray(theta0.v, dtype=float)
    speed_err = theta0.speed_error(model)
    if speed_err > 1e-10:
        raise ValueError(f"initial vector is not unit length (|g(v,v)-1| = {speed_err:.2e})")
    n = model.dim
    F0 = normal_frame(model, p0, v0) if frame0 is None else np.asarray(frame0, dtype=float).reshape(n, n - 1)
    stops = _dense_stops(T, dense_dt, dense_times)
    y0 = np.concatenate([p0, v0, F0.ravel()])
    spec = model.kernel_spec()
    if spec is not None and n == 2:
        kind, params = spec
        times, states, status, stats = _kernels.geodesic_2d(kind, params, y0, float(T), tol, h_max, stops)
        backend = _kernels.BACKEND
    else:
        times, states, status, stats = _generic_integrate(model, y0, float(T), tol, h_max, stops)
        backend = "python-generic"
    if status == _kernels.STEP_UNDERFLOW:
        raise StepSizeUnderflow(f"step size underflow at t={times[-1]:.6g} on {model.label}")
    positions = states[:, :n]
    velocities = states[:, n:2 * n]
    frames = states[:, 2 * n:].reshape(-1, n, n - 1)
    R, dR = _curvature_samples(model, positions, velocities, frames, times)
    seg = OrbitSegment(
        times=times,
        positions=positions,
        velocities=velocities,
        frames=frames,
        R=R,
        dR=dR,
        model_label=model.label,
        settings={"tol": tol, "h_max": h_max, "dense_dt": dense_dt, "backend": backend,
                  "integrator": "dopri5(4)-PI"},
        diagnostics={
            "accepted_steps": int(stats[0]),
            "rejected_steps": int(stats[1]),
            "max_speed_correction": float(stats[2]),
            "max_frame_correction": float(stats[3]),
        },
        complete=status == _kernels.OK,
    )
    if status != _kernels.OK:
        msg = f"geodesic left the chart of {model.label} at t={times[-1]:.6g} (requested {T})"
        if status == _kernels.MAX_STEPS:
            msg = f"step budget exhausted at t={times[-1]:.6g}"
        log.warning(msg)
        if strict:
            raise ChartExit(msg, segment=seg)
    return seg


def transport_frame(model: MetricModel, orbit: OrbitSegment, tol: Optional[float] = None) -> OrbitSegment:
    """Fill frame and curvature samples on the node grid of ``orbit``.

    Re-integrates the joint geodesic/frame system from the first node with
    stops at every existing node, so the grids coincide.
    """
    tol = orbit.settings.get("tol", 1e-10) if tol is None else tol
    t0 = orbit.t0
    theta = orbit.state(0)
    T = orbit.t1 - t0
    seg = integrate_geodesic(model, theta, T, tol=tol, dense_dt=None,
                             dense_times=orbit.times - t0, h_max=orbit.settings.get("h_max", 0.1))
    keep = [seg.index_of(t - t0) for t in orbit.times]
    out = replace(
        seg,
        times=orbit.times.copy(),
        positions=seg.positions[keep],
        velocities=seg.velocities[keep],
        frames=seg.frames[keep],
        R=seg.R[keep],
        dR=seg.dR[keep],
    )
    if not seg.complete:
        raise ChartExit("frame transport left the chart", segment=out)
    return out


def frame_gram_error(model: MetricModel, orbit: OrbitSegment) -> float:
    """Largest deviation from orthonormality of (V_1..V_{n-1}, gamma') over the nodes."""
    worst = 0.0
    for p, v, F in zip(orbit.positions, orbit.velocities, orbit.frames):
        g = model.metric_tensor(p)
        B = np.column_stack([F, v])
        worst = max(worst, float(np.max(np.abs(B.T @ g @ B - np.eye(B.shape[1])))))
    return worst


def speed_error(model: MetricModel, orbit: OrbitSegment) -> float:
    return max(abs(float(v @ model.metric_tensor(p) @ v) - 1.0)
               for p, v in zip(orbit.positions, orbit.velocities))


# ---------------------------------------------------------------------------
# Sasaki metric
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SasakiVector:
    """Horizontal/vertical pair written in the parallel frame."""

    horizontal: np.ndarray
    vertical: np.ndarray

    def __post_init__(self):
        h = np.atleast_1d(np.asarray(self.horizontal, dtype=float))
        v = np.atleast_1d(np.asarray(self.vertical, dtype=float))
        if h.shape != v.shape:
            raise ValueError("horizontal and vertical parts must have the same dimension")
        object.__setattr__(self, "horizontal", h)
        object.__setattr__(self, "vertical", v)


def sasaki_norm(xi: SasakiVector) -> float:
    return math.sqrt(float(xi.horizontal @ xi.horizontal) + float(xi.vertical @ xi.vertical))


def sasaki_distance_smallscale(model: MetricModel, theta1: UnitTangentState,
                               theta2: UnitTangentState, max_separation: float = 0.1) -> float:
    """First-order Sasaki distance between nearby unit vectors.

    Base length is the chord in the midpoint metric; the vertical part
    compares v1 with v2 transported back to p1 along the chart segment
    (one midpoint Runge-Kutta step). Error is O(separation^2); use it for
    difference quotients only.
    """
    p1 = model.check_point(theta1.p)
    p2 = model.check_point(theta2.p)
    v1 = np.asarray(theta1.v, dtype=float)
    v2 = np.asarray(theta2.v, dtype=float)
    dp = p1 - p2
    sep = math.sqrt(float(dp @ dp) + float((v2 - v1) @ (v2 - v1)))
    if sep > max_separation:
        raise SeparationTooLarge(f"chart separation {sep:.3g} exceeds {max_separation}")
    if sep == 0.0:
        return 0.0
    pm = 0.5 * (p1 + p2)
    gm = model.metric_tensor(pm)
    d_base_sq = float(dp @ gm @ dp)
    k1 = -np.einsum("kij,i,j->k", model.christoffel(p2), dp, v2)
    k2 = -np.einsum("kij,i,j->k", model.christoffel(pm), dp, v2 + 0.5 * k1)
    v2_par = v2 + k2
    dv = v2_par - v1
    g1 = model.metric_tensor(p1)
    return math.sqrt(d_base_sq + float(dv @ g1 @ dv))
