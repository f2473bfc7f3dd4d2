"""Riemannian metric models on explicit charts.

Built-in families
-----------------
Hyperbolic(c, dim)
    Upper half-space ``x_n > 0`` with ``g = |dx|^2 / (c x_n)^2``; constant
    sectional curvature ``-c^2``.
ConformalPerturbed(c, eps, bump)
    ``g = exp(2 eps psi) g_hyp`` on the upper half-plane, ``psi`` a smooth
    compactly supported bump.
WarpedProduct(f)
    ``dr^2 + f(r)^2 dphi^2`` on the strip (r, phi); curvature ``-f''/f``.
CustomChart(name)
    A metric tensor picked from a registry; derivatives by 4th-order central
    differences.

All models are immutable. Chart points are plain float arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DerivativeUnavailable, PointOutsideChart, ValidationError

# 4th-order central differences: h = eps^(1/5) scaled by |coordinate|
FD_BASE_STEP = np.finfo(float).eps ** 0.2


def _as_point(p, dim):
    p = np.asarray(p, dtype=float)
    if p.shape != (dim,):
        raise PointOutsideChart(f"expected a point with {dim} coordinates, got shape {p.shape}")
    return p


def conformal_christoffel(grad_sigma):
    """Christoffel symbols ``G[k, i, j]`` of ``g = exp(2 sigma) * I``."""
    s = np.asarray(grad_sigma, dtype=float)
    n = s.shape[0]
    eye = np.eye(n)
    return (np.einsum("ki,j->kij", eye, s) + np.einsum("kj,i->kij", eye, s)
            - np.einsum("ij,k->kij", eye, s))


def constant_curvature_riemann(K, g):
    """``R^l_{ijk}`` for a space form: R(X,Y)Z = K(<Y,Z>X - <X,Z>Y)."""
    n = g.shape[0]
    eye = np.eye(n)
    return K * (np.einsum("jk,li->lijk", g, eye) - np.einsum("ik,lj->lijk", g, eye))


def _fd_derivative(fun, p, axis, in_domain):
    """4th-order central difference of ``fun`` along ``axis`` at ``p``."""
    h = FD_BASE_STEP * max(1.0, abs(p[axis]))
    e = np.zeros_like(p)
    e[axis] = h
    pts = [p - 2 * e, p - e, p + e, p + 2 * e]
    if not all(in_domain(q) for q in pts):
        raise DerivativeUnavailable(
            f"finite-difference stencil leaves the chart at {p.tolist()} (axis {axis}, h={h:.3g})")
    f_m2, f_m1, f_p1, f_p2 = (fun(q) for q in pts)
    return (f_m2 - 8.0 * f_m1 + 8.0 * f_p1 - f_p2) / (12.0 * h)


def christoffel_from_metric(metric, p, in_domain):
    """Levi-Civita symbols from finite differences of a metric function."""
    n = p.shape[0]
    dg = np.stack([_fd_derivative(metric, p, l, in_domain) for l in range(n)])  # dg[l, i, j]
    ginv = np.linalg.inv(metric(p))
    # Gamma_{l i j} (first kind) = 1/2 (d_i g_lj + d_j g_li - d_l g_ij)
    first = 0.5 * (np.einsum("ilj->lij", dg) + np.einsum("jli->lij", dg) - dg)
    return np.einsum("kl,lij->kij", ginv, first)


def riemann_from_christoffel(christoffel, p, in_domain):
    """``R^l_{ijk}`` with R(X,Y)Z = nabla_X nabla_Y Z - nabla_Y nabla_X Z - nabla_[X,Y] Z."""
    n = p.shape[0]
    G = christoffel(p)
    dG = np.stack([_fd_derivative(christoffel, p, i, in_domain) for i in range(n)])  # dG[i, l, j, k]
    term = np.einsum("iljk->lijk", dG) - np.einsum("jlik->lijk", dG)
    term += np.einsum("lim,mjk->lijk", G, G) - np.einsum("ljm,mik->lijk", G, G)
    return term


@dataclass(frozen=True)
class CurvatureBounds:
    inf_K: float
    sup_K: float
    c: float
    sample_count: int
    domain: tuple
    grid: tuple
    negatively_curved: bool
    sampled: bool = True

    def to_dict(self):
        return {
            "inf_K": self.inf_K,
            "sup_K": self.sup_K,
            "c": self.c,
            "sample_count": self.sample_count,
            "domain": [list(b) for b in self.domain],
            "grid": list(self.grid),
            "negatively_curved": self.negatively_curved,
            "note": "bounds are sampled on a grid, not proved",
        }


class MetricModel:
    """Common interface. Subclasses set ``dim`` and implement the oracles."""

    dim: int = 2
    #: exact constant sectional curvature, or None when it varies
    constant_curvature: Optional[float] = None

    # -- chart domain ---------------------------------------------------
    def in_domain(self, p) -> bool:
        return bool(np.all(np.isfinite(p)))

    def check_point(self, p):
        p = _as_point(p, self.dim)
        if not self.in_domain(p):
            raise PointOutsideChart(f"{p.tolist()} is outside the chart of {self.label}")
        return p

    # -- oracles --------------------------------------------------------
    def metric_tensor(self, p):
        raise NotImplementedError

    def christoffel(self, p):
        p = self.check_point(p)
        return christoffel_from_metric(self._metric_unchecked, p, self.in_domain)

    def gaussian_curvature(self, p):
        if self.dim != 2:
            raise ValueError("gaussian_curvature needs a 2-dimensional model; use curvature_matrix")
        p = self.check_point(p)
        R = self.riemann(p)
        g = self._metric_unchecked(p)
        # <R(e1,e2)e2,e1> / |e1 ^ e2|^2
        num = np.einsum("l,l->", g[0], R[:, 0, 1, 1])
        return float(num / np.linalg.det(g))

    def riemann(self, p):
        """``R[l, i, j, k]``; 2-D analytic models route through the Gaussian curvature."""
        p = self.check_point(p)
        if self.dim == 2 and type(self).gaussian_curvature is not MetricModel.gaussian_curvature:
            return constant_curvature_riemann(self.gaussian_curvature(p), self._metric_unchecked(p))
        return riemann_from_christoffel(self._christoffel_unchecked, p, self.in_domain)

    def curvature_rate(self, p, v):
        """d/dt K(gamma(t)) for a curve through p with velocity v (2-D only)."""
        p = self.check_point(p)
        grad = np.array([_fd_derivative(self.gaussian_curvature, p, i, self.in_domain)
                         for i in range(self.dim)])
        return float(grad @ np.asarray(v, dtype=float))

    def distance(self, p, q):
        """Closed-form Riemannian distance where the model knows one."""
        raise NotImplementedError(f"no closed-form distance for {self.label}")

    # -- compiled-kernel hook ---------------------------------------------
    def kernel_spec(self):
        """``(kind, params)`` for the compiled geodesic kernel, or None."""
        return None

    # -- misc -------------------------------------------------------------
    def _metric_unchecked(self, p):
        return self.metric_tensor(p)

    def _christoffel_unchecked(self, p):
        return self.christoffel(p)

    @property
    def label(self) -> str:
        raise NotImplementedError

    def default_box(self):
        raise NotImplementedError

    def to_spec(self) -> dict:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# conformal family (hyperbolic and its bump perturbation)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Bump:
    """``amplitude * exp(1 - 1/(1-u))`` for ``u = |p - center|^2 / radius^2 < 1``.

    Radial in chart coordinates, C-infinity, supported in the open disc.
    """

    center: tuple = (0.0, 1.0)
    radius: float = 1.0
    amplitude: float = 0.2

    def derivatives(self, x, y):
        """Return (psi, psi_x, psi_y, laplacian psi); broadcasts over arrays."""
        x0, y0 = self.center
        rho2 = self.radius ** 2
        dx = np.asarray(x, dtype=float) - x0
        dy = np.asarray(y, dtype=float) - y0
        u = (dx * dx + dy * dy) / rho2
        inside = u < 1.0
        w = np.where(inside, 1.0 - u, 1.0)
        b = np.where(inside, np.exp(1.0 - 1.0 / w), 0.0)
        b1 = -b / w ** 2
        b2 = b * (1.0 / w ** 4 - 2.0 / w ** 3)
        A = self.amplitude
        psi = A * b
        psi_x = A * b1 * 2.0 * dx / rho2
        psi_y = A * b1 * 2.0 * dy / rho2
        lap = A * (b2 * 4.0 * u / rho2 + b1 * 4.0 / rho2)
        return psi, psi_x, psi_y, lap

    def to_spec(self):
        return {"center": list(self.center), "radius": self.radius, "amplitude": self.amplitude}


class _Conformal2D(MetricModel):
    """g = exp(2 sigma) I with sigma = eps*psi - log(c*y) on y > 0."""

    dim = 2
    c: float
    eps: float
    bump: Bump

    def in_domain(self, p):
        return bool(np.all(np.isfinite(p))) and p[-1] > 0.0

    def _sigma(self, x, y):
        psi, px, py, lap = self.bump.derivatives(x, y)
        sigma = self.eps * psi - np.log(self.c * y)
        return sigma, self.eps * px, self.eps * py - 1.0 / y, psi, lap

    def metric_tensor(self, p):
        p = self.check_point(p)
        return self._metric_unchecked(p)

    def _metric_unchecked(self, p):
        sigma = self._sigma(p[0], p[1])[0]
        return math.exp(2.0 * float(sigma)) * np.eye(2)

    def christoffel(self, p):
        p = self.check_point(p)
        return self._christoffel_unchecked(p)

    def _christoffel_unchecked(self, p):
        _, sx, sy, _, _ = self._sigma(p[0], p[1])
        return conformal_christoffel([float(sx), float(sy)])

    def curvature_field(self, x, y):
        """Vectorized Gaussian curvature e^{-2 eps psi}(-c^2 - eps*Lap_hyp psi)."""
        psi, _, _, lap = self.bump.derivatives(x, y)
        y = np.asarray(y, dtype=float)
        c2 = self.c ** 2
        return np.exp(-2.0 * self.eps * psi) * (-c2 - self.eps * c2 * y * y * lap)

    def gaussian_curvature(self, p):
        p = self.check_point(p)
        if self.eps == 0.0:
            return -self.c ** 2
        return float(self.curvature_field(p[0], p[1]))

    def curvature_rate(self, p, v):
        if self.eps == 0.0:
            return 0.0
        p = self.check_point(p)
        x0, y0 = self.bump.center
        if (p[0] - x0) ** 2 + (p[1] - y0) ** 2 >= self.bump.radius ** 2:
            return 0.0
        return super().curvature_rate(p, v)

    def curvature_rate_field(self, x, y, vx, vy):
        """Vectorized d/dt K along velocities (vx, vy); FD gradient inside the bump."""
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        out = np.zeros(np.broadcast(x, y).shape)
        if self.eps == 0.0:
            return out
        x0, y0 = self.bump.center
        inside = (x - x0) ** 2 + (y - y0) ** 2 < self.bump.radius ** 2
        if not np.any(inside):
            return out
        xi, yi = x[inside], y[inside]
        grads = []
        for axis, coord in ((0, xi), (1, yi)):
            h = FD_BASE_STEP * np.maximum(1.0, np.abs(coord))
            shifted = [(xi + k * h, yi) if axis == 0 else (xi, yi + k * h) for k in (-2, -1, 1, 2)]
            f = [self.curvature_field(a, b) for a, b in shifted]
            grads.append((f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * h))
        out[inside] = grads[0] * np.asarray(vx)[inside] + grads[1] * np.asarray(vy)[inside]
        return out

    def kernel_spec(self):
        b = self.bump
        return 0, np.array([self.c, self.eps, b.center[0], b.center[1], b.radius, b.amplitude])


class Hyperbolic(MetricModel):
    """Upper half-space model of constant curvature ``-c^2``."""

    def __init__(self, c: float = 1.0, dim: int = 2):
        if not c > 0:
            raise ValidationError("Hyperbolic needs c > 0", key="c")
        if dim < 2:
            raise ValidationError("dimension must be >= 2", key="dim")
        self.c = float(c)
        self.dim = int(dim)
        self.constant_curvature = -self.c ** 2

    def __repr__(self):
        return f"Hyperbolic(c={self.c:g}, dim={self.dim})"

    def __eq__(self, other):
        return isinstance(other, Hyperbolic) and (self.c, self.dim) == (other.c, other.dim)

    def __hash__(self):
        return hash(("Hyperbolic", self.c, self.dim))

    @property
    def label(self):
        return f"hyperbolic-c{self.c:g}" + (f"-n{self.dim}" if self.dim != 2 else "")

    def in_domain(self, p):
        return bool(np.all(np.isfinite(p))) and p[-1] > 0.0

    def metric_tensor(self, p):
        p = self.check_point(p)
        return self._metric_unchecked(p)

    def _metric_unchecked(self, p):
        return np.eye(self.dim) / (self.c * p[-1]) ** 2

    def christoffel(self, p):
        p = self.check_point(p)
        return self._christoffel_unchecked(p)

    def _christoffel_unchecked(self, p):
        s = np.zeros(self.dim)
        s[-1] = -1.0 / p[-1]
        return conformal_christoffel(s)

    def gaussian_curvature(self, p):
        if self.dim != 2:
            raise ValueError("gaussian_curvature needs a 2-dimensional model; use curvature_matrix")
        self.check_point(p)
        return -self.c ** 2

    def riemann(self, p):
        p = self.check_point(p)
        return constant_curvature_riemann(-self.c ** 2, self._metric_unchecked(p))

    def curvature_rate(self, p, v):
        return 0.0

    def distance(self, p, q):
        p = self.check_point(p)
        q = self.check_point(q)
        arg = 1.0 + float(np.sum((p - q) ** 2)) / (2.0 * p[-1] * q[-1])
        return math.acosh(arg) / self.c

    def kernel_spec(self):
        if self.dim != 2:
            return None
        return 0, np.array([self.c, 0.0, 0.0, 1.0, 1.0, 0.0])

    def default_box(self):
        return tuple([(-2.0, 2.0)] * (self.dim - 1) + [(0.1, 10.0)])

    def to_spec(self):
        spec = {"kind": "hyperbolic", "c": self.c}
        if self.dim != 2:
            spec["dim"] = self.dim
        return spec


class ConformalPerturbed(_Conformal2D):
    """``exp(2 eps psi) g_hyp`` with a compactly supported bump ``psi``."""

    def __init__(self, c: float = 1.0, eps: float = 0.1, bump: Optional[Bump] = None):
        if not c > 0:
            raise ValidationError("ConformalPerturbed needs c > 0", key="c")
        self.c = float(c)
        self.eps = float(eps)
        self.bump = bump if bump is not None else Bump()
        if not self.bump.radius > 0:
            raise ValidationError("bump radius must be positive", key="bump.radius")
        self.constant_curvature = -self.c ** 2 if self.eps == 0.0 or self.bump.amplitude == 0.0 else None

    def __repr__(self):
        return f"ConformalPerturbed(c={self.c:g}, eps={self.eps:g}, bump={self.bump})"

    def __eq__(self, other):
        return isinstance(other, ConformalPerturbed) and (self.c, self.eps, self.bump) == (
            other.c, other.eps, other.bump)

    def __hash__(self):
        return hash(("ConformalPerturbed", self.c, self.eps, self.bump))

    @property
    def label(self):
        return f"conformal-c{self.c:g}-eps{self.eps:g}"

    def default_box(self):
        (x0, y0), rho = self.bump.center, self.bump.radius
        return ((x0 - 1.2 * rho, x0 + 1.2 * rho), (max(y0 - 1.2 * rho, 0.05), y0 + 1.2 * rho))

    def to_spec(self):
        return {"kind": "conformal", "c": self.c, "eps": self.eps, "bump": self.bump.to_spec()}


# ---------------------------------------------------------------------------
# warped products
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoshSum:
    """``f(r) = sum_k a_k cosh(b_k r)``."""

    terms: tuple = ((1.0, 1.0),)
    name: str = "cosh"
    params: tuple = ()

    def __call__(self, r, order=0):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for a, b in self.terms:
            if order % 2 == 0:
                out = out + a * b ** order * np.cosh(b * r)
            else:
                out = out + a * b ** order * np.sinh(b * r)
        return out

    def domain(self, r):
        return True

    def kernel_params(self):
        flat = [0.0, float(len(self.terms))]
        for a, b in self.terms:
            flat += [float(a), float(b)]
        return flat


@dataclass(frozen=True)
class Sine:
    """``f(r) = sin r`` on (0, pi): the round unit sphere in polar coordinates."""

    name: str = "sin"
    params: tuple = ()
    terms: tuple = ()

    def __call__(self, r, order=0):
        r = np.asarray(r, dtype=float)
        return [np.sin, np.cos, lambda t: -np.sin(t), lambda t: -np.cos(t)][order % 4](r)

    def domain(self, r):
        return 0.0 < r < math.pi

    def kernel_params(self):
        return [1.0, 0.0]


def _cosh(rate=1.0):
    return CoshSum(((1.0, float(rate)),), name="cosh", params=(("rate", float(rate)),))


def _cosh_mix(weight=0.25):
    return CoshSum(((1.0, 1.0), (float(weight), 2.0)), name="cosh_mix", params=(("weight", float(weight)),))


def _sin():
    return Sine()


#: warping functions selectable by name from a config file
WARPING_REGISTRY: dict[str, Callable] = {
    "cosh": _cosh,
    "cosh_mix": _cosh_mix,
    "sin": _sin,
}


class WarpedProduct(MetricModel):
    """``dr^2 + f(r)^2 dphi^2`` in coordinates (r, phi)."""

    dim = 2

    def __init__(self, f="cosh", **params):
        if isinstance(f, str):
            if f not in WARPING_REGISTRY:
                raise ValidationError(f"unknown warping function {f!r}", key="f")
            f = WARPING_REGISTRY[f](**params)
        self.f = f
        self.constant_curvature = None
        if isinstance(f, CoshSum) and len(f.terms) == 1:
            self.constant_curvature = -f.terms[0][1] ** 2
        elif isinstance(f, Sine):
            self.constant_curvature = 1.0

    def __repr__(self):
        return f"WarpedProduct(f={self.f.name}, {dict(self.f.params)})"

    def __eq__(self, other):
        return isinstance(other, WarpedProduct) and self.f == other.f

    def __hash__(self):
        return hash(("WarpedProduct", self.f))

    @property
    def label(self):
        extra = "".join(f"-{k}{v:g}" for k, v in self.f.params)
        return f"warped-{self.f.name}{extra}"

    def in_domain(self, p):
        if not np.all(np.isfinite(p)):
            return False
        return bool(self.f.domain(p[0])) and float(self.f(p[0])) > 0.0

    def metric_tensor(self, p):
        p = self.check_point(p)
        return self._metric_unchecked(p)

    def _metric_unchecked(self, p):
        fr = float(self.f(p[0]))
        return np.diag([1.0, fr * fr])

    def christoffel(self, p):
        p = self.check_point(p)
        return self._christoffel_unchecked(p)

    def _christoffel_unchecked(self, p):
        f0 = float(self.f(p[0]))
        f1 = float(self.f(p[0], 1))
        G = np.zeros((2, 2, 2))
        G[0, 1, 1] = -f0 * f1
        G[1, 0, 1] = G[1, 1, 0] = f1 / f0
        return G

    def curvature_field(self, r, phi=None):
        return -self.f(r, 2) / self.f(r)

    def gaussian_curvature(self, p):
        p = self.check_point(p)
        return float(self.curvature_field(p[0]))

    def curvature_rate(self, p, v):
        p = self.check_point(p)
        f0, f1, f2, f3 = (float(self.f(p[0], k)) for k in range(4))
        dK = -(f3 * f0 - f2 * f1) / (f0 * f0)
        return dK * float(v[0])

    def curvature_rate_field(self, r, phi, vr, vphi):
        r = np.asarray(r, dtype=float)
        f0, f1, f2, f3 = (np.asarray(self.f(r, k), dtype=float) for k in range(4))
        return -(f3 * f0 - f2 * f1) / (f0 * f0) * np.asarray(vr, dtype=float)

    def kernel_spec(self):
        return 1, np.array(self.f.kernel_params())

    def default_box(self):
        if isinstance(self.f, Sine):
            return ((0.1, math.pi - 0.1), (0.0, 1.0))
        return ((-20.0, 20.0), (0.0, 1.0))

    def to_spec(self):
        spec = {"kind": "warped", "f": self.f.name}
        spec.update(dict(self.f.params))
        return spec


def sphere_fixture():
    """Round unit sphere (K = +1) in polar chart; used only by conjugate-point tests."""
    return WarpedProduct("sin")


# ---------------------------------------------------------------------------
# custom charts
# ---------------------------------------------------------------------------

def _euclidean(dim=2, radius=None):
    """Flat chart; with ``radius`` the domain is the open ball of that radius."""
    dim = int(dim)
    if radius is None:
        return (lambda p: np.eye(dim)), (lambda p: bool(np.all(np.isfinite(p)))), dim
    r2 = float(radius) ** 2
    return (lambda p: np.eye(dim)), (lambda p: bool(np.all(np.isfinite(p))) and float(p @ p) < r2), dim


def _halfspace(c=1.0, dim=2):
    dim, c = int(dim), float(c)
    return ((lambda p: np.eye(dim) / (c * p[-1]) ** 2),
            (lambda p: bool(np.all(np.isfinite(p))) and p[-1] > 0.0), dim)


#: metric tensors selectable by name; each factory returns (g, in_domain, dim)
CHART_REGISTRY: dict[str, Callable] = {
    "euclidean": _euclidean,
    "halfspace": _halfspace,
}


class CustomChart(MetricModel):
    """Metric tensor from the chart registry, derivatives by finite differences."""

    def __init__(self, g="euclidean", **params):
        if g not in CHART_REGISTRY:
            raise ValidationError(f"unknown chart metric {g!r}", key="g")
        self.name = g
        self.params = tuple(sorted(params.items()))
        self._g, self._domain, self.dim = CHART_REGISTRY[g](**params)
        self.constant_curvature = 0.0 if g == "euclidean" else None

    def __repr__(self):
        return f"CustomChart({self.name!r}, {dict(self.params)})"

    def __eq__(self, other):
        return isinstance(other, CustomChart) and (self.name, self.params) == (other.name, other.params)

    def __hash__(self):
        return hash(("CustomChart", self.name, self.params))

    @property
    def label(self):
        return f"custom-{self.name}"

    def in_domain(self, p):
        return self._domain(np.asarray(p, dtype=float))

    def metric_tensor(self, p):
        p = self.check_point(p)
        return np.asarray(self._g(p), dtype=float)

    def _metric_unchecked(self, p):
        return np.asarray(self._g(p), dtype=float)

    def christoffel(self, p):
        return self._christoffel_unchecked(self.check_point(p))

    def _christoffel_unchecked(self, p):
        if self.name == "euclidean":
            return np.zeros((self.dim,) * 3)
        return christoffel_from_metric(self._metric_unchecked, p, self.in_domain)

    def gaussian_curvature(self, p):
        if self.name == "euclidean":
            self.check_point(p)
            return 0.0
        return MetricModel.gaussian_curvature(self, p)

    def riemann(self, p):
        p = self.check_point(p)
        if self.name == "euclidean":
            return np.zeros((self.dim,) * 4)
        return riemann_from_christoffel(self._christoffel_unchecked, p, self.in_domain)

    def curvature_rate(self, p, v):
        if self.name == "euclidean":
            return 0.0
        return super().curvature_rate(p, v)

    def default_box(self):
        if self.name == "halfspace":
            return tuple([(-2.0, 2.0)] * (self.dim - 1) + [(0.1, 10.0)])
        half = min(1.0, 0.5 * float(dict(self.params).get("radius", 2.0)))
        return tuple([(-half, half)] * self.dim)

    def to_spec(self):
        spec = {"kind": "custom", "g": self.name}
        spec.update(dict(self.params))
        return spec


# ---------------------------------------------------------------------------
# module-level operations
# ---------------------------------------------------------------------------

def metric_tensor(model: MetricModel, p) -> np.ndarray:
    return model.metric_tensor(p)


def christoffel(model: MetricModel, p) -> np.ndarray:
    """``G[k, i, j] = Gamma^k_{ij}``, symmetric in (i, j)."""
    return model.christoffel(p)


def gaussian_curvature(model: MetricModel, p) -> float:
    return model.gaussian_curvature(p)


def curvature_matrix(model: MetricModel, p, v, frame) -> np.ndarray:
    """``R_ij = <R(V_i, v) v, V_j>`` for the frame columns ``V_i``.

    Diagonal entries are sectional curvatures of the planes (V_i, v).
    """
    p = np.asarray(p, dtype=float)
    frame = np.asarray(frame, dtype=float).reshape(model.dim, -1)
    if model.dim == 2:
        return np.array([[model.gaussian_curvature(p)]])
    Rm = model.riemann(p)
    g = model.metric_tensor(p)
    RV = np.einsum("labc,ai,b,c->li", Rm, frame, v, v)
    out = frame.T @ g @ RV
    return 0.5 * (out + out.T)


def _sectional_samples(model, pts):
    if model.dim == 2:
        if hasattr(model, "curvature_field") and model.constant_curvature is None:
            return np.asarray(model.curvature_field(pts[:, 0], pts[:, 1]), dtype=float)
        return np.array([model.gaussian_curvature(p) for p in pts])
    out = []
    for p in pts:
        Rm = model.riemann(p)
        g = model.metric_tensor(p)
        for i in range(model.dim):
            for j in range(i + 1, model.dim):
                num = np.einsum("l,l->", g[i], Rm[:, i, j, j])
                den = g[i, i] * g[j, j] - g[i, j] ** 2
                # <R(e_i,e_j)e_j,e_i> / |e_i ^ e_j|^2
                out.append(num / den)
    return np.asarray(out)


def curvature_bounds(model: MetricModel, domain: Optional[Sequence] = None,
                     grid=64) -> CurvatureBounds:
    """Sample sectional curvature on a tensor grid over ``domain``.

    ``grid`` is an int (same count per axis) or one count per axis, each >= 2.
    For n > 2 the coordinate 2-planes are sampled.
    """
    if domain is None:
        domain = model.default_box()
    domain = tuple((float(lo), float(hi)) for lo, hi in domain)
    if len(domain) != model.dim:
        raise ValidationError(f"sampling box needs {model.dim} intervals", key="domain")
    counts = (int(grid),) * model.dim if np.isscalar(grid) else tuple(int(g) for g in grid)
    if len(counts) != model.dim or min(counts) < 2:
        raise ValidationError("grid needs >= 2 points per axis", key="grid")
    axes = [np.linspace(lo, hi, k) for (lo, hi), k in zip(domain, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    for p in (pts[0], pts[-1]):
        model.check_point(p)
    if not all(model.in_domain(p) for p in pts):
        raise PointOutsideChart("sampling box leaves the chart domain")
    K = _sectional_samples(model, pts)
    inf_K, sup_K = float(K.min()), float(K.max())
    return CurvatureBounds(
        inf_K=inf_K,
        sup_K=sup_K,
        c=math.sqrt(-inf_K) if inf_K < 0 else 0.0,
        sample_count=int(pts.shape[0]),
        domain=domain,
        grid=counts,
        negatively_curved=sup_K < 0.0,
    )


def model_from_spec(spec: dict) -> MetricModel:
    """Build a model from a config mapping (``kind`` tag plus numeric parameters)."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    try:
        if kind == "hyperbolic":
            return Hyperbolic(**spec)
        if kind == "conformal":
            bump = spec.pop("bump", None)
            if bump is not None:
                bump = dict(bump)
                if "center" in bump:
                    bump["center"] = tuple(float(x) for x in bump["center"])
                bump = Bump(**bump)
            return ConformalPerturbed(bump=bump, **spec)
        if kind == "warped":
            return WarpedProduct(**spec)
        if kind == "sphere":
            if spec:
                raise TypeError(f"unexpected keys {sorted(spec)}")
            return sphere_fixture()
        if kind == "custom":
            return CustomChart(**spec)
    except TypeError as exc:
        raise ValidationError(f"bad parameters for model kind {kind!r}: {exc}", key="model") from exc
    raise ValidationError(f"unknown model kind {kind!r}", key="model.kind")
