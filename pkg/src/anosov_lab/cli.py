"""``lab``: run experiment configs and one-shot probes from the shell.

Subcommands::

    lab run <config|paper-suite> [--output-dir D] [--jobs N] [--seed S] [--tol X] [--warn-only]
    lab probe MODEL --at X Y
    lab orbit MODEL --p X Y (--v VX VY | --angle A) --T T [--out FILE]
    lab riccati MODEL --p X Y (--v VX VY | --angle A) --T-back T [--out FILE]

MODEL is ``kind[:key=value,...]``, e.g. ``hyperbolic:c=2`` or
``warped:f=cosh_mix,weight=0.25``.

Exit codes: 0 success; 1 a Violation, an Inconclusive verdict (unless
warn-only) or a failed write; 2 bad arguments or config; 3 output
directory unusable (nothing is written).

Orbit CSV columns: t, x0..x{n-1}, v0..v{n-1}, V{i}_{k} (frame vector i,
component k), R{i}{j}. Green-limit CSV columns: T_back, U{i}{j}, cauchy_gap.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from importlib import resources

import numpy as np

from .config import RunConfig, _model, load_config
from .errors import LabError, NoConvergence, ParseError, ValidationError
from .geodesic_flow import UnitTangentState, integrate_geodesic, state_at_angle, unit_state
from .jacobi_riccati import backward_extender, green_limit
from .metric_models import curvature_bounds, model_from_spec
from .rigidity_experiments import ExperimentReport, Verdict, run_experiment, write_report

log = logging.getLogger("anosov_lab.cli")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_OUTPUT = 0, 1, 2, 3
DEFAULT_OUTPUT_DIR = "lab-output"
BUNDLED = ("paper-suite",)


def _coerce(text):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_model_arg(text: str) -> dict:
    """``hyperbolic:c=2`` -> {"kind": "hyperbolic", "c": 2.0} (validated)."""
    kind, _, rest = text.partition(":")
    raw = {"kind": kind.strip()}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, eq, value = item.partition("=")
        if not eq:
            raise ValidationError(f"model parameter {item!r} is not key=value", key="model")
        raw[key.strip()] = _coerce(value.strip())
    return _model(raw, "model")


def _state(model, args) -> UnitTangentState:
    if args.v is not None:
        return unit_state(model, args.p, args.v)
    return state_at_angle(model, args.p, args.angle if args.angle is not None else 0.0)


def resolve_config_path(arg: str) -> str:
    if os.path.exists(arg) or arg not in BUNDLED:
        return arg
    return str(resources.files("anosov_lab").joinpath("data", f"{arg}.toml"))


def resolve_output_dir(flag, config: RunConfig) -> str:
    """Flag, then config, then ``LAB_OUTPUT_DIR``, then ./lab-output."""
    return flag or config.output_dir or os.environ.get("LAB_OUTPUT_DIR") or DEFAULT_OUTPUT_DIR


def check_output_dir(path: str):
    """Create ``path`` if needed and prove it is writable; raises OSError."""
    os.makedirs(path, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".probe-", dir=path)
    os.close(fd)
    os.unlink(tmp)


def exit_status(verdicts, warn_only_inconclusive=False, io_failures=0) -> int:
    """0 iff no Violation and no (non-waived) Inconclusive and every write succeeded."""
    bad = {Verdict.VIOLATION}
    if not warn_only_inconclusive:
        bad.add(Verdict.INCONCLUSIVE)
    if io_failures or any(Verdict(v) in bad for v in verdicts):
        return EXIT_FAIL
    return EXIT_OK


def apply_overrides(config: RunConfig, seed=None, tol=None):
    """Effective specs: global tolerances merged, CLI seed and integrator tol on top."""
    specs = []
    for spec in config.experiments:
        eff = config.effective(spec)
        if seed is not None:
            eff.seed = int(seed)
        if tol is not None:
            eff.tolerances.update({"orbit_tol": float(tol), "ode_tol": float(tol)})
        specs.append(eff)
    return specs


def _run_one(spec) -> ExperimentReport:
    return run_experiment(spec)


def cmd_run(args) -> int:
    try:
        config = load_config(resolve_config_path(args.config))
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.jobs is not None:
        config.parallel_jobs = args.jobs
    if args.warn_only:
        config.warn_only_inconclusive = True
    if not config.experiments:
        print("warning: nothing to do", file=sys.stderr)
        return EXIT_OK
    out_dir = resolve_output_dir(args.output_dir, config)
    try:
        check_output_dir(out_dir)
    except OSError as exc:
        print(f"error: output directory {out_dir!r} is not writable: {exc}", file=sys.stderr)
        return EXIT_OUTPUT
    specs = apply_overrides(config, seed=args.seed, tol=args.tol)
    if config.parallel_jobs > 1 and len(specs) > 1:
        with ProcessPoolExecutor(max_workers=config.parallel_jobs) as pool:
            reports = list(pool.map(_run_one, specs))
    else:
        reports = [_run_one(s) for s in specs]
    failures = []
    for report in reports:
        try:
            write_report(report, out_dir)
        except OSError as exc:
            failures.append(f"{report.name}: write failed ({exc})")
            print(f"{report.summary_line()} [not written: {exc}]")
            continue
        print(report.summary_line())
    verdicts = [r.verdict for r in reports]
    status = exit_status(verdicts, config.warn_only_inconclusive, io_failures=len(failures))
    counts = {v.value: sum(1 for x in verdicts if x == v) for v in Verdict if v in verdicts}
    failures += [f"{r.name}: {r.verdict.value}" for r in reports
                 if r.verdict == Verdict.VIOLATION
                 or (r.verdict == Verdict.INCONCLUSIVE and not config.warn_only_inconclusive)]
    summary = ", ".join(f"{n} {k}" for k, n in counts.items())
    print(f"summary: {len(reports)} experiments ({summary}); reports in {out_dir}")
    for f in failures:
        print(f"  failed: {f}")
    return status


def probe_text(model, p) -> str:
    p = model.check_point(p)
    g = model.metric_tensor(p)
    gam = model.christoffel(p)
    lines = [f"model: {model.label}", f"point: {tuple(float(x) for x in p)}",
             f"metric: {np.array2string(g, precision=12)}"]
    n = model.dim
    if n == 2:
        lines.append(f"K = {model.gaussian_curvature(p):.12g}")
    else:
        R = model.riemann(p)
        for i in range(n):
            for j in range(i + 1, n):
                num = float(g[i] @ R[:, i, j, j])
                den = float(g[i, i] * g[j, j] - g[i, j] ** 2)
                lines.append(f"K(e{i},e{j}) = {num / den:.12g}")
    lines.append("Christoffel symbols Gamma^k_ij (nonzero):")
    for k in range(n):
        for i in range(n):
            for j in range(i, n):
                if abs(gam[k, i, j]) > 1e-14:
                    lines.append(f"  Gamma^{k}_{i}{j} = {gam[k, i, j]:.12g}")
    return "\n".join(lines) + "\n"


def _emit(text, out):
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    directory = os.path.dirname(os.path.abspath(out))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    print(f"wrote {out}", file=sys.stderr)


def _default_out(args, stem):
    if args.out is not None:
        return args.out
    d = args.output_dir or os.environ.get("LAB_OUTPUT_DIR")
    if d:
        check_output_dir(d)
        return os.path.join(d, stem + ".csv")
    return None


def cmd_probe(args) -> int:
    model = model_from_spec(parse_model_arg(args.model))
    sys.stdout.write(probe_text(model, args.at))
    return EXIT_OK


def cmd_orbit(args) -> int:
    model = model_from_spec(parse_model_arg(args.model))
    theta = _state(model, args)
    orbit = integrate_geodesic(model, theta, args.T, tol=args.tol, dense_dt=args.dt)
    _emit(orbit.to_csv(), _default_out(args, f"orbit-{model.label}"))
    if not orbit.complete:
        print(f"warning: orbit left the chart at t = {orbit.t1:.6g}; CSV is partial", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_riccati(args) -> int:
    model = model_from_spec(parse_model_arg(args.model))
    theta = _state(model, args)
    c = args.c if args.c is not None else curvature_bounds(model).c
    if not c > 0:
        print(f"error: {model.label} is not negatively curved (c = {c:g})", file=sys.stderr)
        return EXIT_FAIL
    T_init = min(5.0 / c, args.T_back)
    try:
        res = green_limit(backward_extender(model, theta, tol=args.orbit_tol), c, tol=args.tol,
                          T_init=T_init, T_max=args.T_back)
    except NoConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(f"cauchy gap = {res.cauchy_gap:.3e} at T_back = {res.T_back_used:g}; "
          f"||U+|| = {np.linalg.norm(res.U_plus, 2):.12g} (c = {c:.12g})", file=sys.stderr)
    _emit(res.to_csv(), _default_out(args, f"green-{model.label}"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lab", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="info-level logging on stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config", help="config file, or a bundled name: " + ", ".join(BUNDLED))
    r.add_argument("--output-dir", help="report directory (default: config, $LAB_OUTPUT_DIR, ./lab-output)")
    r.add_argument("--jobs", type=int, help="experiments run concurrently")
    r.add_argument("--seed", type=int, help="override every experiment's seed")
    r.add_argument("--tol", type=float, help="integrator tolerance (orbit_tol and ode_tol)")
    r.add_argument("--warn-only", action="store_true", help="Inconclusive verdicts do not fail the run")
    r.set_defaults(func=cmd_run)

    p = sub.add_parser("probe", help="curvature and Christoffel symbols at a point")
    p.add_argument("model")
    p.add_argument("--at", type=float, nargs="+", required=True, metavar="X")
    p.set_defaults(func=cmd_probe)

    def state_args(sp):
        sp.add_argument("model")
        sp.add_argument("--p", type=float, nargs="+", required=True, metavar="X")
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--v", type=float, nargs="+", metavar="V")
        g.add_argument("--angle", type=float, help="direction angle on surfaces (default 0)")
        sp.add_argument("--out", help="output CSV ('-' for stdout)")
        sp.add_argument("--output-dir", help="directory for the CSV when --out is not given")

    o = sub.add_parser("orbit", help="integrate a geodesic and write its CSV")
    state_args(o)
    o.add_argument("--T", type=float, required=True)
    o.add_argument("--tol", type=float, default=1e-10)
    o.add_argument("--dt", type=float, default=0.05, help="output spacing")
    o.set_defaults(func=cmd_orbit)

    q = sub.add_parser("riccati", help="Green-limit trace of U+ at a state")
    state_args(q)
    q.add_argument("--T-back", dest="T_back", type=float, required=True)
    q.add_argument("--tol", type=float, default=1e-8, help="Cauchy-gap tolerance")
    q.add_argument("--orbit-tol", type=float, default=1e-11)
    q.add_argument("--c", type=float, help="curvature bound (default: sampled)")
    q.set_defaults(func=cmd_riccati)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    if getattr(args, "jobs", None) is not None and args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ValidationError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OUTPUT
    except (LabError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
