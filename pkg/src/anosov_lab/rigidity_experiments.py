"""Named experiments with verdicts: the contraction inequality, the rigidity
probe over a perturbation family, exponent rigidity, the distance-derivative
check and stable-leaf exponent constancy.

Reports are deterministic for a fixed (spec, seed): no timestamps or
timings are stored, and every tolerance, grid and integrator setting is
echoed.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional

import numpy as np

from . import _kernels
from .errors import LabError, NoConvergence, NotNegativelyCurved
from .geodesic_flow import (
    SasakiVector,
    UnitTangentState,
    integrate_geodesic,
    normal_frame,
    sasaki_distance_smallscale,
    sasaki_norm,
    state_at_angle,
)
from .jacobi_riccati import stable_at
from .metric_models import (
    ConformalPerturbed,
    Hyperbolic,
    MetricModel,
    WarpedProduct,
    curvature_bounds,
    model_from_spec,
)
from .spectra import (
    analyze_grid,
    birkhoff_ricci,
    contraction_from_analyses,
    gate_fits,
)

log = logging.getLogger(__name__)

REPORT_SCHEMA = "experiment-report/1"
TABLE_CSV_SCHEMA = "experiment-table/1"

DEFAULT_TOLERANCES = {
    "orbit_tol": 1e-11,
    "green_tol": 1e-8,
    "ode_tol": 1e-11,
    "equality_tol": 1e-3,
    "strict_factor": 10.0,
    "green_bound_tol": 1e-6,
    "det_agreement_rtol": 1e-4,
    "residual_max": 1e-3,
    "variance_threshold": 1e-6,
    "dense_dt": 0.05,
}

CAVEATS = [
    "curvature bounds are sampled on a finite grid, not proved",
    "lambda_hat is the largest fitted stable rate over a finite theta-grid; equality with e^-c is certified only up to the stated tolerance",
    "finite volume is a modeling assumption; Birkhoff values are time averages along single orbits, not space averages",
]


class Verdict(str, Enum):
    INEQUALITY_HOLDS = "InequalityHolds"
    EQUALITY_RIGIDITY_CONSISTENT = "EqualityRigidityConsistent"
    VIOLATION = "Violation"
    INCONCLUSIVE = "Inconclusive"


@dataclass
class ExperimentSpec:
    name: str
    kind: str
    model: dict
    T: float = 50.0
    grid: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    seed: int = 0
    curvature_grid: int = 200
    options: dict = field(default_factory=dict)

    def tol(self, key):
        return float(self.tolerances.get(key, DEFAULT_TOLERANCES[key]))

    def all_tolerances(self):
        out = dict(DEFAULT_TOLERANCES)
        out.update({k: float(v) for k, v in self.tolerances.items()})
        return out

    def to_dict(self):
        return {
            "name": self.name,
            "kind": self.kind,
            "model": copy.deepcopy(self.model),
            "T": self.T,
            "grid": copy.deepcopy(self.grid),
            "tolerances": dict(self.tolerances),
            "seed": self.seed,
            "curvature_grid": self.curvature_grid,
            "options": copy.deepcopy(self.options),
        }


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, Enum):
        return obj.value
    return obj


@dataclass
class ExperimentReport:
    spec: dict
    model_label: str
    verdict: Verdict = Verdict.INCONCLUSIVE
    curvature_bounds: Optional[dict] = None
    c_hat: Optional[float] = None
    lambda_hat: Optional[float] = None
    exponents: dict = field(default_factory=dict)
    birkhoff: dict = field(default_factory=dict)
    rigidity_defect: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    table_columns: List[str] = field(default_factory=list)
    table_rows: List[list] = field(default_factory=list)
    logs: List[str] = field(default_factory=list)
    settings: dict = field(default_factory=dict)
    caveats: List[str] = field(default_factory=lambda: list(CAVEATS))

    @property
    def name(self):
        return self.spec["name"]

    def check(self, name, ok, value=None, threshold=None):
        self.checks[name] = {"ok": bool(ok), "value": value, "threshold": threshold}
        if not ok:
            self.logs.append(f"check failed: {name} (value={value!r}, threshold={threshold!r})")
        return bool(ok)

    def all_checks_ok(self):
        return all(c["ok"] for c in self.checks.values())

    def to_dict(self):
        return _clean({
            "schema": REPORT_SCHEMA,
            "spec": self.spec,
            "model": self.model_label,
            "verdict": self.verdict,
            "curvature_bounds": self.curvature_bounds,
            "c_hat": self.c_hat,
            "lambda_hat": self.lambda_hat,
            "exponents": self.exponents,
            "birkhoff": self.birkhoff,
            "rigidity_defect": self.rigidity_defect,
            "checks": self.checks,
            "flags": self.flags,
            "settings": self.settings,
            "caveats": self.caveats,
            "logs": self.logs,
            "table_columns": self.table_columns,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema={TABLE_CSV_SCHEMA} experiment={self.name} kind={self.spec['kind']}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.table_columns)
        for row in self.table_rows:
            w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for v in row])
        return buf.getvalue()

    def file_stem(self) -> str:
        return f"{self.name}-{self.model_label}-{self.spec.get('seed', 0)}"

    def summary_line(self) -> str:
        extra = []
        if self.lambda_hat is not None and self.c_hat is not None:
            extra.append(f"lambda_hat={self.lambda_hat:.6f} e^-c={math.exp(-self.c_hat):.6f}")
        for k in ("equality", "strict", "misconfigured"):
            if self.flags.get(k):
                extra.append(k)
        return f"{self.name}: {self.verdict.value}" + (f" ({', '.join(extra)})" if extra else "")


def write_report(report: ExperimentReport, out_dir: str):
    """Write <stem>.json and <stem>.csv atomically; returns both paths."""
    stem = os.path.join(out_dir, report.file_stem())
    paths = []
    for ext, text in ((".json", report.to_json()), (".csv", report.to_csv())):
        fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=out_dir)
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            os.replace(tmp, stem + ext)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        paths.append(stem + ext)
    return paths


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

class _LogCapture(logging.Handler):
    def __init__(self):
        super().__init__(logging.INFO)
        self.records = []

    def emit(self, record):
        self.records.append(f"{record.levelname.lower()}: {record.getMessage()}")


def _start_box(model: MetricModel):
    if isinstance(model, (Hyperbolic, ConformalPerturbed)):
        return [[-1.0, 1.0], [0.5, 2.0]] if model.dim == 2 else [[-1.0, 1.0]] * (model.dim - 1) + [[0.5, 2.0]]
    if isinstance(model, WarpedProduct):
        if model.constant_curvature is not None and model.constant_curvature > 0:
            return [[1.0, 2.0], [0.0, 2 * math.pi]]
        return [[-1.0, 1.0], [0.0, 2 * math.pi]]
    return [[-1.0, 1.0]] * model.dim


def theta_grid(model: MetricModel, grid: dict, seed: int) -> List[UnitTangentState]:
    """Deterministic base-point grid: ``count`` random states plus ``include``.

    Random states have base points uniform in ``box`` and directions
    uniform in angle; ``include`` entries are {"p": [...], "angle": a} or
    {"p": [...], "v": [...]}.
    """
    count = int(grid.get("count", 20))
    box = grid.get("box") or _start_box(model)
    rng = np.random.default_rng(seed)
    out = []
    for entry in grid.get("include", []):
        p = np.asarray(entry["p"], dtype=float)
        if "v" in entry:
            v = np.asarray(entry["v"], dtype=float)
            g = model.metric_tensor(p)
            out.append(UnitTangentState(p, v / math.sqrt(float(v @ g @ v))))
        else:
            out.append(state_at_angle(model, p, float(entry.get("angle", 0.0))))
    for _ in range(count):
        p = np.array([rng.uniform(lo, hi) for lo, hi in box])
        if model.dim == 2:
            out.append(state_at_angle(model, p, rng.uniform(0.0, 2 * math.pi)))
        else:
            d = rng.normal(size=model.dim)
            g = model.metric_tensor(p)
            out.append(UnitTangentState(p, d / math.sqrt(float(d @ g @ d))))
    return out


def _settings(spec: ExperimentSpec, extra=None):
    out = {
        "integrator": "Dormand-Prince 5(4), PI step control, mixed abs/rel tolerance",
        "backend": _kernels.BACKEND,
        "h_max": 0.1,
        "tolerances": spec.all_tolerances(),
        "green_policy": {"T_init": "5/c", "T_max": "200/c", "doubling": True},
        "fit_window": spec.options.get("fit_window", "[T/5, T]"),
        "curvature_grid": spec.curvature_grid,
    }
    if extra:
        out.update(extra)
    return out


def _bounds(model, spec):
    box = spec.options.get("box")
    return curvature_bounds(model, domain=box, grid=spec.curvature_grid)


def _point_kwargs(spec):
    kw = {
        "orbit_tol": spec.tol("orbit_tol"),
        "green_tol": spec.tol("green_tol"),
        "ode_tol": spec.tol("ode_tol"),
        "dense_dt": spec.tol("dense_dt"),
    }
    if spec.options.get("fit_window") is not None:
        kw["window"] = tuple(spec.options["fit_window"])
    return kw


def _c_hat(bounds, analyses):
    inf_orbit = min(float(np.min(np.linalg.eigvalsh(a.orbit.R))) for a in analyses)
    inf_K = min(bounds.inf_K, inf_orbit)
    return math.sqrt(-inf_K) if inf_K < 0 else 0.0, inf_orbit


def _orbit_variance(analyses):
    vals = np.concatenate([np.trace(a.orbit.R, axis1=1, axis2=2) / a.orbit.m for a in analyses])
    return float(np.var(vals))


def _max_green_norm(analyses):
    out = 0.0
    for a in analyses:
        out = max(out, *a.green_norms(),
                  float(np.max(np.abs(np.linalg.eigvalsh(a.U_plus_path.values)))),
                  float(np.max(np.abs(np.linalg.eigvalsh(a.U_minus_path.values)))))
    return out


def _theta_cols(model):
    n = model.dim
    return [f"p{k}" for k in range(n)] + [f"v{k}" for k in range(n)]


def _grid_analysis(model, spec, c, jobs):
    thetas = theta_grid(model, spec.grid, spec.seed)
    analyses, skipped = analyze_grid(model, thetas, spec.T, c, jobs=jobs, **_point_kwargs(spec))
    analyses, rejected = gate_fits(analyses, spec.tol("residual_max"))
    skipped = skipped + rejected
    sample_spec = {
        "count": int(spec.grid.get("count", 20)),
        "box": spec.grid.get("box") or _start_box(model),
        "include": spec.grid.get("include", []),
        "seed": spec.seed,
        "T": spec.T,
    }
    est = contraction_from_analyses(analyses, skipped, sample_spec)
    return analyses, est


def _per_point_block(report, model, analyses, c_hat, lam, spec):
    """Exponents, determinant estimators, Birkhoff values and r(t) per point."""
    rtol = spec.tol("det_agreement_rtol")
    rows = []
    det_rel = []
    proj_ok = True
    r_ratio = []
    birk = []
    resid = []
    for a in analyses:
        dt = a.det_trace()
        dd = a.det_direct(c_hat)
        rel = abs(dd.value - dt.value) / max(abs(dd.value), 1e-300)
        det_rel.append(rel)
        proj_ok = proj_ok and dd.extra["projection_bounds_ok"]
        rs = a.r(lam, c_hat)
        r_ratio.append(rs.max_ratio)
        b = birkhoff_ricci(a.orbit)
        birk.append(b)
        resid.extend([a.chi_u.residual, a.chi_s.residual])
        rows.append([*a.theta.p.tolist(), *a.theta.v.tolist(), a.chi_s.value, a.chi_u.value,
                     dt.value, dd.value, float(np.linalg.norm(a.U_plus, 2)),
                     float(np.linalg.norm(a.U_minus, 2)), b, rs.max_ratio])
    report.table_columns = _theta_cols(model) + [
        "chi_s", "chi_u", "det_trace", "det_direct", "norm_U_plus", "norm_U_minus", "birkhoff_ricci", "r_max_over_bound"]
    report.table_rows = rows
    chi_u = [a.chi_u.value for a in analyses]
    chi_s = [a.chi_s.value for a in analyses]
    report.exponents = {
        "chi_u": {"min": min(chi_u), "max": max(chi_u), "mean": float(np.mean(chi_u))},
        "chi_s": {"min": min(chi_s), "max": max(chi_s), "mean": float(np.mean(chi_s))},
        "det_trace_mean": float(np.mean([r[-6] for r in rows])),
        "det_direct_mean": float(np.mean([r[-5] for r in rows])),
        "det_max_relative_difference": max(det_rel),
        "fit_window": list(analyses[0].chi_u.window),
        "max_fit_residual": max(resid),
    }
    report.birkhoff = {
        "ricci_time_average": {"min": min(birk), "max": max(birk), "mean": float(np.mean(birk))},
        "space_average_target": -c_hat ** 2,
    }
    gmax = _max_green_norm(analyses)
    report.check("green_bound", gmax <= c_hat + spec.tol("green_bound_tol"), gmax, c_hat + spec.tol("green_bound_tol"))
    report.check("det_estimators_agree", max(det_rel) <= rtol, max(det_rel), rtol)
    report.check("projection_bounds", proj_ok, proj_ok, True)
    report.check("fit_residual", max(resid) <= spec.tol("residual_max"), max(resid), spec.tol("residual_max"))
    report.check("r_bounded", max(r_ratio) <= 1.0, max(r_ratio), 1.0)
    return rows


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def run_inequality_experiment(spec: ExperimentSpec, jobs: int = 1) -> ExperimentReport:
    """lambda_hat against e^{-c_hat}: InequalityHolds iff lambda_hat >= e^{-c_hat} - tol."""
    model = model_from_spec(spec.model)
    report = ExperimentReport(spec.to_dict(), model.label, settings=_settings(spec))
    bounds = _bounds(model, spec)
    report.curvature_bounds = bounds.to_dict()
    if not bounds.negatively_curved:
        raise NotNegativelyCurved(f"{model.label}: sampled sup_K = {bounds.sup_K:g} >= 0")
    analyses, est = _grid_analysis(model, spec, bounds.c, jobs)
    c_hat, inf_orbit = _c_hat(bounds, analyses)
    report.curvature_bounds["orbit_inf_K"] = inf_orbit
    report.c_hat = c_hat
    report.lambda_hat = est.lambda_hat
    tol = spec.tol("equality_tol")
    margin = est.lambda_hat - math.exp(-c_hat)
    _per_point_block(report, model, analyses, c_hat, est.lambda_hat, spec)
    report.exponents["contraction"] = est.to_dict()
    report.rigidity_defect = {"d1": abs(margin), "d2": _orbit_variance(analyses),
                              "d1_definition": "|lambda_hat - e^-c_hat|",
                              "d2_definition": "variance of K over orbit nodes"}
    report.flags = {"margin": margin, "equality": abs(margin) <= tol,
                    "strict": margin > spec.tol("strict_factor") * tol}
    if not report.all_checks_ok():
        report.verdict = Verdict.INCONCLUSIVE
    elif margin < -tol:
        report.verdict = Verdict.VIOLATION
    else:
        report.verdict = Verdict.INEQUALITY_HOLDS
    return report


def run_rigidity_probe(spec: ExperimentSpec, jobs: int = 1) -> ExperimentReport:
    """Co-movement of d1 = |lambda_hat - e^-c_hat| and d2 = Var K over an eps sweep."""
    eps_values = [float(e) for e in spec.options.get("eps_values", [0.0, 0.05, 0.1, 0.2])]
    base = dict(spec.model)
    models = []
    if base.get("kind") == "conformal":
        for e in eps_values:
            m = dict(base)
            m["eps"] = e
            models.append((e, model_from_spec(m)))
    else:
        models.append((None, model_from_spec(base)))
    bounds = {}
    for e, model in models:
        b = _bounds(model, spec)
        if not b.negatively_curved:
            raise NotNegativelyCurved(f"{model.label}: sampled sup_K = {b.sup_K:g} >= 0")
        bounds[e] = b
    report = ExperimentReport(spec.to_dict(), models[0][1].label if len(models) == 1 else
                              model_from_spec(dict(base, eps=max(eps_values))).label.rsplit("-eps", 1)[0],
                              settings=_settings(spec, {"eps_values": eps_values}))
    tol = spec.tol("equality_tol")
    strict = spec.tol("strict_factor") * tol
    var_thr = spec.tol("variance_threshold")
    rows = []
    sweep = []
    violation = False
    ok = True
    for e, model in models:
        analyses, est = _grid_analysis(model, spec, bounds[e].c, jobs)
        c_hat, _ = _c_hat(bounds[e], analyses)
        margin = est.lambda_hat - math.exp(-c_hat)
        d1, d2 = abs(margin), _orbit_variance(analyses)
        birk = float(np.mean([birkhoff_ricci(a.orbit) for a in analyses]))
        violation = violation or margin < -tol
        label = model.label
        if d2 == 0.0:
            good = d1 <= tol
            ok &= report.check(f"equality[{label}]", good, d1, tol)
        elif d2 > var_thr:
            good = d1 > strict
            ok &= report.check(f"strict[{label}]", good, d1, strict)
        gmax = _max_green_norm(analyses)
        ok &= report.check(f"green_bound[{label}]", gmax <= c_hat + spec.tol("green_bound_tol"), gmax,
                           c_hat + spec.tol("green_bound_tol"))
        sweep.append({"eps": e, "model": label, "c_hat": c_hat, "lambda_hat": est.lambda_hat,
                      "margin": margin, "d1": d1, "d2": d2, "birkhoff_ricci_mean": birk,
                      "curvature_bounds": bounds[e].to_dict()})
        rows.append([e, c_hat, est.lambda_hat, margin, d1, d2, birk])
    d1s = [s["d1"] for s in sweep]
    report.table_columns = ["eps", "c_hat", "lambda_hat", "margin", "d1", "d2", "birkhoff_ricci_mean"]
    report.table_rows = rows
    report.rigidity_defect = {
        "sweep": sweep,
        "d1_monotone_nondecreasing": all(b >= a for a, b in zip(d1s, d1s[1:])),
        "d1_definition": "|lambda_hat - e^-c_hat|",
        "d2_definition": "variance of K over orbit nodes",
    }
    report.c_hat = sweep[-1]["c_hat"]
    report.lambda_hat = sweep[-1]["lambda_hat"]
    report.curvature_bounds = sweep[-1]["curvature_bounds"]
    if violation and ok:
        report.verdict = Verdict.VIOLATION
    elif ok:
        report.verdict = Verdict.EQUALITY_RIGIDITY_CONSISTENT
    else:
        report.verdict = Verdict.INCONCLUSIVE
    return report


def run_exponent_rigidity(spec: ExperimentSpec, jobs: int = 1) -> ExperimentReport:
    """chi_u = c, chi_s = -c and det exponent c(n-1) in constant curvature."""
    model = model_from_spec(spec.model)
    report = ExperimentReport(spec.to_dict(), model.label, settings=_settings(spec))
    K = model.constant_curvature
    if K is None or K >= 0:
        report.logs.append("refused: curvature is not a negative constant, so lambda = e^-c is not certified")
        report.verdict = Verdict.INCONCLUSIVE
        report.flags = {"refused": True}
        return report
    c = math.sqrt(-K)
    bounds = _bounds(model, spec)
    report.curvature_bounds = bounds.to_dict()
    analyses, est = _grid_analysis(model, spec, c, jobs)
    report.c_hat = c
    report.lambda_hat = est.lambda_hat
    tol = spec.tol("equality_tol")
    n = model.dim
    _per_point_block(report, model, analyses, c, est.lambda_hat, spec)
    report.exponents["contraction"] = est.to_dict()
    du = max(abs(a.chi_u.value - c) for a in analyses)
    ds = max(abs(a.chi_s.value + c) for a in analyses)
    dets = [(a.det_trace().value, a.det_direct(c).value) for a in analyses]
    ddet = max(max(abs(x - c * (n - 1)), abs(y - c * (n - 1))) for x, y in dets)
    sums = max(abs(a.chi_u.value + a.chi_s.value) for a in analyses)
    diffs = []
    for a in analyses:
        t = a.orbit.times
        lo, hi = a.chi_u.window
        mask = (t >= lo - 1e-9) & (t <= hi + 1e-9)
        y = a.unstable_curve.log_base[mask] - a.stable_curve.log_base[mask]
        diffs.append(float(np.polyfit(t[mask], y, 1)[0]))
    ddiff = max(abs(d - 2 * c) for d in diffs)
    report.check("chi_u_equals_c", du <= tol, du, tol)
    report.check("chi_s_equals_minus_c", ds <= tol, ds, tol)
    report.check("det_exponent_equals_c(n-1)", ddet <= tol, ddet, tol)
    report.check("sum_rule", sums <= 2e-4, sums, 2e-4)
    report.check("difference_identity_2c", ddiff <= tol, ddiff, tol)
    report.check("lambda_hat_equals_e^-c", abs(est.lambda_hat - math.exp(-c)) <= tol,
                 abs(est.lambda_hat - math.exp(-c)), tol)
    # r(t) at the critical and a sub-critical lambda
    crit = [a.r(math.exp(-c), c) for a in analyses]
    sub = [a.r(math.exp(-1.1 * c), c) for a in analyses]
    min_inc = min(r.min_increment() for r in crit)
    exceed = [r.exceeds_at for r in sub]
    report.check("r_nondecreasing_at_e^-c", min_inc >= -1e-6, min_inc, -1e-6)
    report.check("r_bounded_at_e^-c", max(r.max_ratio for r in crit) <= 1.0, max(r.max_ratio for r in crit), 1.0)
    worst = max((x if x is not None else math.inf) for x in exceed)
    report.check("r_exceeds_bound_subcritical", worst < 30.0, worst, 30.0)
    report.exponents.update({"max_abs_chi_u_minus_c": du, "max_abs_chi_s_plus_c": ds,
                             "max_abs_det_minus_c(n-1)": ddet, "max_abs_sum": sums,
                             "max_abs_difference_minus_2c": ddiff,
                             "subcritical_exceed_times": exceed})
    report.rigidity_defect = {"d1": abs(est.lambda_hat - math.exp(-c)), "d2": _orbit_variance(analyses)}
    report.flags = {"equality": abs(est.lambda_hat - math.exp(-c)) <= tol}
    report.verdict = Verdict.EQUALITY_RIGIDITY_CONSISTENT if report.all_checks_ok() else Verdict.INCONCLUSIVE
    return report


CURVE_FAMILIES = ("fiber_rotation", "geodesic_lift", "stable_graph")


def _curve_family(model, theta, family, c, spec):
    """(alpha(h) callable, Sasaki norm of alpha'(0))."""
    p, v = theta.p, theta.v
    V = normal_frame(model, p, v)[:, 0]
    if family == "fiber_rotation":
        return (lambda h: UnitTangentState(p, math.cos(h) * v + math.sin(h) * V)), \
            sasaki_norm(SasakiVector([0.0], [1.0]))
    if family == "geodesic_lift":
        def alpha(h):
            seg = integrate_geodesic(model, theta, h, tol=spec.tol("orbit_tol"), dense_dt=None)
            return seg.state(len(seg) - 1)
        return alpha, sasaki_norm(SasakiVector([1.0], [0.0]))
    if family == "stable_graph":
        u = float(stable_at(model, theta, c, tol=spec.tol("green_tol"), orbit_tol=spec.tol("orbit_tol")).U_plus[0, 0])

        def alpha(h):
            # move along the geodesic in direction V, carry v parallel, rotate by h*u
            seg = integrate_geodesic(model, UnitTangentState(p, V), h, tol=spec.tol("orbit_tol"),
                                     dense_dt=None, frame0=v.reshape(2, 1))
            k = len(seg) - 1
            q, w_par = seg.positions[k], seg.frames[k][:, 0]
            n_par = seg.velocities[k]
            return UnitTangentState(q, math.cos(h * u) * w_par + math.sin(h * u) * n_par)
        return alpha, sasaki_norm(SasakiVector([1.0], [u]))
    raise ValueError(f"unknown curve family {family!r}")


def run_distance_derivative_check(spec: ExperimentSpec, jobs: int = 1) -> ExperimentReport:
    """d(alpha(h), alpha(0)) / h -> ||alpha'(0)|| with observed order >= 1."""
    model = model_from_spec(spec.model)
    report = ExperimentReport(spec.to_dict(), model.label, settings=_settings(spec))
    if model.dim != 2:
        raise ValueError("distance-derivative families are defined for surfaces")
    opts = spec.options
    p0 = opts.get("p", [0.0, 1.0])
    theta = state_at_angle(model, p0, float(opts.get("angle", 0.0)))
    steps = [float(h) for h in opts.get("steps", [1e-2, 1e-3, 1e-4])]
    families = opts.get("families", list(CURVE_FAMILIES))
    tol = spec.tol("equality_tol")
    c = curvature_bounds(model, grid=spec.curvature_grid).c if model.constant_curvature is None \
        else math.sqrt(max(-model.constant_curvature, 0.0))
    rows = []
    summary = {}
    for fam in families:
        alpha, target = _curve_family(model, theta, fam, c, spec)
        a0 = alpha(0.0) if fam != "geodesic_lift" else theta
        errs, ratios = [], []
        for h in steps:
            d = sasaki_distance_smallscale(model, a0, alpha(h))
            ratios.append(d / h)
            errs.append(abs(d / h - target))
            rows.append([fam, h, d / h, target, errs[-1]])
        floor = 1e-12
        le = np.log(np.maximum(errs, floor))
        lh = np.log(steps)
        order = float(np.polyfit(lh, le, 1)[0]) if max(errs) > floor else math.inf
        summary[fam] = {"target": target, "ratios": ratios, "errors": errs, "observed_order": order}
        report.check(f"order[{fam}]", order >= 1.0, order, 1.0)
        report.check(f"final_error[{fam}]", errs[-1] <= tol, errs[-1], tol)
    report.table_columns = ["family", "h", "ratio", "target", "error"]
    report.table_rows = rows
    report.exponents = {"distance_derivative": summary, "base_state": theta.to_dict()}
    report.verdict = Verdict.EQUALITY_RIGIDITY_CONSISTENT if report.all_checks_ok() else Verdict.INCONCLUSIVE
    return report


def _leaf_companions(model: Hyperbolic, p0, offsets, leaf):
    c = model.c
    x0, y0 = float(p0[0]), float(p0[1])
    out = []
    for s in offsets:
        if leaf == "stable":
            # same height, vertical: shares the forward ideal point at infinity
            out.append(UnitTangentState((x0 + s, y0), (0.0, c * y0)))
        elif leaf == "unstable":
            # horocycle tangent to the boundary at (x0, 0), outward normals
            rad = y0 / 2.0
            px, py = x0 + rad * math.sin(s), y0 / 2.0 + rad * math.cos(s)
            out.append(UnitTangentState((px, py), (c * py * math.sin(s), c * py * math.cos(s))))
        else:
            raise ValueError(f"unknown leaf {leaf!r}")
    return out


def run_stable_leaf_constancy(spec: ExperimentSpec, jobs: int = 1) -> ExperimentReport:
    """chi_u is constant along an explicit stable leaf of the hyperbolic plane."""
    model = model_from_spec(spec.model)
    report = ExperimentReport(spec.to_dict(), model.label, settings=_settings(spec))
    if not isinstance(model, Hyperbolic) or model.dim != 2:
        report.logs.append("refused: stable leaves are only constructed on the hyperbolic plane")
        report.verdict = Verdict.INCONCLUSIVE
        report.flags = {"refused": True}
        return report
    c = model.c
    opts = spec.options
    p0 = opts.get("p", [0.0, 1.0])
    offsets = [float(s) for s in opts.get("offsets", [0.3, -0.3, 0.6, -0.6, 1.0])]
    leaf = opts.get("leaf", "stable")
    t_check = float(opts.get("check_time", 10.0))
    theta = UnitTangentState(p0, (0.0, c * float(p0[1])))
    companions = _leaf_companions(model, p0, offsets, leaf)
    orbit0 = integrate_geodesic(model, theta, t_check, tol=spec.tol("orbit_tol"), dense_dt=None)
    end0 = orbit0.positions[-1]
    members = []
    seps = []
    for k, th in enumerate(companions):
        o = integrate_geodesic(model, th, t_check, tol=spec.tol("orbit_tol"), dense_dt=None)
        d0 = model.distance(theta.p, th.p)
        dT = model.distance(end0, o.positions[-1])
        member = dT <= d0 * math.exp(-0.5 * c * t_check)
        members.append(member)
        seps.append({"companion": k, "d0": d0, "d_check": dT, "member": member})
        if not member:
            report.logs.append(f"misconfigured: companion {k} is not on the stable leaf "
                               f"(forward distance {d0:.6g} -> {dT:.6g} at t={t_check:g})")
    report.rigidity_defect = {"leaf_separation": seps}
    if not all(members):
        report.flags = {"misconfigured": True}
        report.check("leaf_membership", False, sum(members), len(members))
        report.verdict = Verdict.INCONCLUSIVE
        return report
    report.check("leaf_membership", True, len(members), len(members))
    states = [theta] + companions
    analyses, skipped = analyze_grid(model, states, spec.T, c, jobs=jobs, **_point_kwargs(spec))
    if skipped:
        raise NoConvergence(f"{len(skipped)} leaf points failed to converge")
    chis = [a.chi_u.value for a in analyses]
    tol = spec.tol("equality_tol")
    spread = max(abs(x - chis[0]) for x in chis)
    dev = max(abs(x - c) for x in chis)
    report.check("chi_u_constant_on_leaf", spread <= tol, spread, tol)
    report.check("chi_u_equals_c", dev <= tol, dev, tol)
    report.c_hat = c
    report.exponents = {"chi_u": chis, "max_pair_difference": spread}
    report.table_columns = ["point", "x", "y", "chi_u", "d0", "d_check"]
    report.table_rows = [[0, float(theta.p[0]), float(theta.p[1]), chis[0], 0.0, 0.0]] + [
        [k + 1, float(th.p[0]), float(th.p[1]), chis[k + 1], seps[k]["d0"], seps[k]["d_check"]]
        for k, th in enumerate(companions)]
    report.verdict = Verdict.EQUALITY_RIGIDITY_CONSISTENT if report.all_checks_ok() else Verdict.INCONCLUSIVE
    return report


EXPERIMENTS: Dict[str, Callable[..., ExperimentReport]] = {
    "inequality": run_inequality_experiment,
    "rigidity_probe": run_rigidity_probe,
    "exponent_rigidity": run_exponent_rigidity,
    "distance_derivative": run_distance_derivative_check,
    "stable_leaf": run_stable_leaf_constancy,
}


def run_experiment(spec: ExperimentSpec, jobs: Optional[int] = None) -> ExperimentReport:
    """Run ``spec``; estimator failures become an Inconclusive report with logs.

    ``jobs`` is the theta-sweep parallelism; by default
    ``spec.options.parallel_points`` (1 if unset).
    """
    if jobs is None:
        jobs = int(spec.options.get("parallel_points", 1))
    handler = _LogCapture()
    root = logging.getLogger("anosov_lab")
    root.addHandler(handler)
    try:
        report = EXPERIMENTS[spec.kind](spec, jobs=jobs)
    except (LabError, ValueError, FloatingPointError) as exc:
        try:
            label = model_from_spec(spec.model).label
        except LabError:
            label = str(spec.model.get("kind", "model"))
        report = ExperimentReport(spec.to_dict(), label, settings=_settings(spec))
        report.logs.append(f"error: {type(exc).__name__}: {exc}")
        report.verdict = Verdict.INCONCLUSIVE
    finally:
        root.removeHandler(handler)
    report.logs = handler.records + report.logs
    return report
