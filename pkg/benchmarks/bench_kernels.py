"""Compiled vs pure-Python kernels: wall time and agreement.

    python benchmarks/bench_kernels.py [--T 50] [--repeat 3]

Times a T-long geodesic (with parallel frame) on two built-in surfaces and
a Jacobi solve along the hyperbolic orbit, once per available backend, and
prints the largest difference between backends.
"""

import argparse
import time

import numpy as np

from anosov_lab import _kernels
from anosov_lab.geodesic_flow import integrate_geodesic, normal_frame, state_at_angle
from anosov_lab.jacobi_riccati import _coefficients
from anosov_lab.metric_models import Hyperbolic, WarpedProduct


def _geodesic_case(model, T):
    theta = state_at_angle(model, (0.1, 1.0) if isinstance(model, Hyperbolic) else (0.2, 0.0), 0.7)
    V = normal_frame(model, theta.p, theta.v)[:, 0]
    y0 = np.array([*theta.p, *theta.v, *V], dtype=float)
    kind, params = model.kernel_spec()
    stops = np.arange(0.05, T + 1e-12, 0.05)

    def run(mod):
        return mod.geodesic_2d(kind, params, y0, float(T), 1e-10, 0.1, stops)[1]
    return run


def _jacobi_case(T):
    model = Hyperbolic(1.0)
    orbit = integrate_geodesic(model, state_at_angle(model, (0.0, 1.0), 0.3), T, tol=1e-11)
    times, R, dR = _coefficients(orbit)
    state0 = np.array([1.0, 1.0])

    def run(mod):
        return mod.linear_nodes(_kernels.MODE_JACOBI, times, R, dR, state0, 1, 1, 0, len(times) - 1, 1e-10)[0]
    return run


def bench(T=50.0, repeat=3):
    cases = {
        "geodesic hyperbolic": _geodesic_case(Hyperbolic(1.0), T),
        "geodesic warped cosh_mix": _geodesic_case(WarpedProduct("cosh_mix"), T),
        "jacobi hyperbolic": _jacobi_case(T),
    }
    backends = _kernels.backends()
    rows = []
    for name, run in cases.items():
        results, timings = {}, {}
        for bname, mod in backends.items():
            best = np.inf
            for _ in range(repeat):
                t0 = time.perf_counter()
                results[bname] = np.asarray(run(mod))
                best = min(best, time.perf_counter() - t0)
            timings[bname] = best
        diff = np.nan
        if len(results) == 2:
            a, b = results["python"], results["compiled"]
            diff = float(np.nanmax(np.abs(a - b))) if a.shape == b.shape else np.inf
        rows.append((name, timings, diff))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--T", type=float, default=50.0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    rows = bench(args.T, args.repeat)
    print(f"active backend: {_kernels.BACKEND}")
    print(f"{'case':28s} {'python [s]':>11s} {'compiled [s]':>13s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, t, diff in rows:
        tp, tc = t.get("python", np.nan), t.get("compiled", np.nan)
        print(f"{name:28s} {tp:11.4f} {tc:13.4f} {tp / tc:8.1f} {diff:11.2e}")


if __name__ == "__main__":
    main()
