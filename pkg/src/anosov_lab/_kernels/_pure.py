"""Pure-Python kernels: Dormand-Prince 5(4) with PI step control.

``_ckernels.pyx`` mirrors ``geodesic_2d`` and ``linear_nodes`` step for step;
the generic ``dopri_integrate`` driver exists only here (it calls back into
Python for the right-hand side).
"""

import math

import numpy as np

OK, CHART_EXIT, STEP_UNDERFLOW, MAX_STEPS, BLOWUP = 0, 1, 2, 3, 4
MODE_JACOBI, MODE_RICCATI, MODE_LINEAR = 0, 1, 2
GEOM_CONFORMAL, GEOM_WARPED = 0, 1

SAFETY = 0.9
# PI controller exponents (Gustafsson); beta = 0 gives the classic I controller
BETA = 0.04
ALPHA = 0.2 - 0.75 * BETA
FAC_MIN, FAC_MAX = 0.2, 5.0
# a step within 1% of a stop is stretched onto it (avoids sliver steps)
STRETCH = 1.01

C2, C3, C4, C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = 9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0
B1, B3, B4, B5, B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
# 5th minus embedded 4th order weights
E1 = B1 - 5179.0 / 57600.0
E3 = B3 - 7571.0 / 16695.0
E4 = B4 - 393.0 / 640.0
E5 = B5 + 92097.0 / 339200.0
E6 = B6 - 187.0 / 2100.0
E7 = -1.0 / 40.0


def _step(rhs, t, y, h):
    k1 = rhs(t, y)
    k2 = rhs(t + C2 * h, y + h * (A21 * k1))
    k3 = rhs(t + C3 * h, y + h * (A31 * k1 + A32 * k2))
    k4 = rhs(t + C4 * h, y + h * (A41 * k1 + A42 * k2 + A43 * k3))
    k5 = rhs(t + C5 * h, y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4))
    k6 = rhs(t + h, y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5))
    y5 = y + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6)
    k7 = rhs(t + h, y5)
    err = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)
    return y5, err


def _err_norm(err, y, y5, tol):
    scale = tol + tol * np.maximum(np.abs(y), np.abs(y5))
    return math.sqrt(float(np.mean((err / scale) ** 2)))


def _accept_factor(err, err_prev):
    if err == 0.0:
        return FAC_MAX
    fac = SAFETY * err ** (-ALPHA) * err_prev ** BETA
    return min(FAC_MAX, max(FAC_MIN, fac))


def _reject_factor(err):
    return max(FAC_MIN, SAFETY * err ** (-0.2))


def _underflow(h, t):
    return h < 1e-14 * max(1.0, abs(t))


def dopri_integrate(rhs, y0, t0, t1, tol, h_max, stops=(), post_step=None,
                    in_domain=None, max_steps=1_000_000):
    """Integrate ``y' = rhs(t, y)`` from t0 to t1 (either direction).

    Every accepted step is recorded; steps are clipped to land exactly on
    ``stops`` (sorted in the direction of integration). ``post_step(y)``
    returns the corrected state plus a tuple of drift numbers, whose
    running maxima are reported.

    Returns (times, states, status, stats) with stats = [accepted, rejected,
    drift maxima...].
    """
    y = np.array(y0, dtype=float)
    t = float(t0)
    direction = 1.0 if t1 >= t0 else -1.0
    span = abs(t1 - t0)
    times = [t]
    states = [y.copy()]
    stats = [0, 0]
    drift_max = []
    if span == 0.0:
        return np.array(times), np.array(states), OK, stats
    targets = [s for s in stops if direction * (s - t0) > 0 and direction * (t1 - s) > 0] + [float(t1)]
    ti = 0
    h = min(h_max, span, 0.01)
    err_prev = 1e-4
    status = OK
    while ti < len(targets):
        target = targets[ti]
        remaining = abs(target - t)
        clipped = h * STRETCH >= remaining
        h_try = remaining if clipped else h
        y5, err_vec = _step(rhs, t, y, direction * h_try)
        err = _err_norm(err_vec, y, y5, tol)
        if not np.all(np.isfinite(y5)):
            err = float("inf")
        if err <= 1.0:
            t = target if clipped else t + direction * h_try
            y = y5
            if post_step is not None:
                y, drift = post_step(y)
                if not drift_max:
                    drift_max = list(drift)
                else:
                    drift_max = [max(a, b) for a, b in zip(drift_max, drift)]
            if in_domain is not None and not in_domain(y):
                status = CHART_EXIT
                break
            times.append(t)
            states.append(y.copy())
            stats[0] += 1
            fac = _accept_factor(err, err_prev)
            err_prev = max(err, 1e-4)
            if clipped:
                ti += 1
                h = h if fac >= 1.0 else h_try * fac
            else:
                h = h_try * fac
            h = min(h, h_max)
        else:
            stats[1] += 1
            h = h_try * (_reject_factor(err) if math.isfinite(err) else FAC_MIN)
            if _underflow(h, t):
                status = STEP_UNDERFLOW
                break
        if stats[0] + stats[1] >= max_steps:
            status = MAX_STEPS
            break
    return np.array(times), np.array(states), status, stats + drift_max


# ---------------------------------------------------------------------------
# geodesic + parallel frame for the built-in 2-D families
# ---------------------------------------------------------------------------

def _bump(px, py, x0, y0, rho, amp):
    dx = px - x0
    dy = py - y0
    rho2 = rho * rho
    u = (dx * dx + dy * dy) / rho2
    if u >= 1.0 or amp == 0.0:
        return 0.0, 0.0, 0.0
    w = 1.0 - u
    b = math.exp(1.0 - 1.0 / w)
    b1 = -b / (w * w)
    return amp * b, amp * b1 * 2.0 * dx / rho2, amp * b1 * 2.0 * dy / rho2


def _warp(r, params):
    if params[0] == 1.0:
        return math.sin(r), math.cos(r)
    f = 0.0
    df = 0.0
    for k in range(int(params[1])):
        a = params[2 + 2 * k]
        b = params[3 + 2 * k]
        f += a * math.cosh(b * r)
        df += a * b * math.sinh(b * r)
    return f, df


def _geodesic_rhs(kind, params):
    params = [float(x) for x in params]
    if kind == GEOM_CONFORMAL:
        c, eps, x0, y0, rho, amp = params

        def rhs(t, s):
            x, y, vx, vy, Vx, Vy = s
            _, bx, by = _bump(x, y, x0, y0, rho, amp)
            sx = eps * bx
            sy = eps * by - 1.0 / y
            sv = sx * vx + sy * vy
            sV = sx * Vx + sy * Vy
            vv = vx * vx + vy * vy
            vV = vx * Vx + vy * Vy
            return np.array([
                vx, vy,
                -2.0 * vx * sv + vv * sx,
                -2.0 * vy * sv + vv * sy,
                -(vx * sV + Vx * sv - vV * sx),
                -(vy * sV + Vy * sv - vV * sy),
            ])
        return rhs

    def rhs(t, s):
        r, phi, vr, vp, Vr, Vp = s
        f, df = _warp(r, params)
        ff = f * df
        q = df / f
        return np.array([
            vr, vp,
            ff * vp * vp,
            -2.0 * q * vr * vp,
            ff * vp * Vp,
            -q * (vr * Vp + vp * Vr),
        ])
    return rhs


def _metric_diag(kind, params, s):
    if kind == GEOM_CONFORMAL:
        c, eps, x0, y0, rho, amp = params
        psi, _, _ = _bump(s[0], s[1], x0, y0, rho, amp)
        lam2 = math.exp(2.0 * eps * psi) / (c * s[1]) ** 2
        return lam2, lam2
    f, _ = _warp(s[0], params)
    return 1.0, f * f


def _geodesic_post(kind, params):
    params = [float(x) for x in params]

    def post(s):
        g0, g1 = _metric_diag(kind, params, s)
        vv = g0 * s[2] * s[2] + g1 * s[3] * s[3]
        speed_drift = abs(vv - 1.0)
        inv = 1.0 / math.sqrt(vv)
        s[2] *= inv
        s[3] *= inv
        Vv = g0 * s[4] * s[2] + g1 * s[5] * s[3]
        VV = g0 * s[4] * s[4] + g1 * s[5] * s[5]
        frame_drift = max(abs(VV - 1.0), abs(Vv))
        s[4] -= Vv * s[2]
        s[5] -= Vv * s[3]
        VV = g0 * s[4] * s[4] + g1 * s[5] * s[5]
        inv = 1.0 / math.sqrt(VV)
        s[4] *= inv
        s[5] *= inv
        return s, (speed_drift, frame_drift)
    return post


def _geodesic_domain(kind, params):
    params = [float(x) for x in params]

    def inside(s):
        if not all(math.isfinite(v) for v in s):
            return False
        if kind == GEOM_CONFORMAL:
            return s[1] > 0.0
        if params[0] == 1.0:
            return 0.0 < s[0] < math.pi
        return True
    return inside


def geodesic_2d(kind, params, y0, t1, tol, h_max, stops, max_steps=1_000_000):
    """Geodesic plus one parallel normal vector for a built-in 2-D family.

    State layout: (x, y, vx, vy, Vx, Vy). Starts at t = 0.
    Returns (times, states, status, stats) where stats is
    [accepted, rejected, max speed drift, max frame drift] measured before
    each renormalization.
    """
    times, states, status, stats = dopri_integrate(
        _geodesic_rhs(kind, params), y0, 0.0, t1, tol, h_max,
        stops=[float(s) for s in stops],
        post_step=_geodesic_post(kind, params),
        in_domain=_geodesic_domain(kind, params),
        max_steps=max_steps,
    )
    if len(stats) == 2:
        stats = stats + [0.0, 0.0]
    return times, states, status, np.array(stats, dtype=float)


# ---------------------------------------------------------------------------
# linear / Riccati matrix ODEs on tabulated coefficients
# ---------------------------------------------------------------------------

def _hermite(t, t0, t1, A0, A1, D0, D1):
    H = t1 - t0
    s = (t - t0) / H
    s2 = s * s
    s3 = s2 * s
    return ((2 * s3 - 3 * s2 + 1) * A0 + (s3 - 2 * s2 + s) * H * D0
            + (-2 * s3 + 3 * s2) * A1 + (s3 - s2) * H * D1)


def linear_nodes(mode, times, coef, dcoef, state0, m, q, i_start, i_end, tol,
                 ceiling=1e12, max_steps=10_000_000):
    """Integrate a matrix ODE node to node along ``times``.

    mode JACOBI:  state (Y, P), Y' = P, P' = -A Y        (Y, P are m x q)
    mode RICCATI: state U,      U' = -U U - A           (m x m, symmetrized)
    mode LINEAR:  state X,      X' = A X                 (m x q)

    ``A`` is the cubic Hermite interpolant of ``coef`` (K x m x m) with
    node derivatives ``dcoef``. Integration runs from node ``i_start`` to
    node ``i_end`` (either direction). Returns (out, status, last_index,
    stats) where ``out`` is K x len(state) with NaN on unvisited nodes and
    stats = [accepted, rejected, max asymmetry, time reached].
    """
    times = np.asarray(times, dtype=float)
    coef = np.asarray(coef, dtype=float)
    dcoef = np.asarray(dcoef, dtype=float)
    n_state = len(state0)
    out = np.full((times.shape[0], n_state), np.nan)
    y = np.array(state0, dtype=float)
    out[i_start] = y
    step = 1 if i_end >= i_start else -1
    acc = rej = 0
    asym_max = 0.0
    status = OK
    h = None
    err_prev = 1e-4
    k = i_start
    while k != i_end:
        k_next = k + step
        ta, tb = times[k], times[k_next]
        lo, hi = (k, k_next) if step > 0 else (k_next, k)
        t_lo, t_hi = times[lo], times[hi]
        A_lo, A_hi, D_lo, D_hi = coef[lo], coef[hi], dcoef[lo], dcoef[hi]

        def A_at(t):
            return _hermite(t, t_lo, t_hi, A_lo, A_hi, D_lo, D_hi)

        if mode == MODE_JACOBI:
            def rhs(t, s):
                Y = s[:m * q].reshape(m, q)
                P = s[m * q:].reshape(m, q)
                return np.concatenate([P.ravel(), (-A_at(t) @ Y).ravel()])
        elif mode == MODE_RICCATI:
            def rhs(t, s):
                U = s.reshape(m, m)
                return (-U @ U - A_at(t)).ravel()
        else:
            def rhs(t, s):
                return (A_at(t) @ s.reshape(m, q)).ravel()

        span = abs(tb - ta)
        direction = 1.0 if tb > ta else -1.0
        if h is None:
            h = min(span, 0.01) if span > 0 else 0.01
        t = ta
        while True:
            remaining = abs(tb - t)
            if remaining == 0.0:
                break
            clipped = h * STRETCH >= remaining
            h_try = remaining if clipped else h
            y5, err_vec = _step(rhs, t, y, direction * h_try)
            err = _err_norm(err_vec, y, y5, tol)
            if not np.all(np.isfinite(y5)):
                err = float("inf")
            if err <= 1.0:
                t = tb if clipped else t + direction * h_try
                y = y5
                acc += 1
                if mode == MODE_RICCATI:
                    U = y.reshape(m, m)
                    asym_max = max(asym_max, float(np.max(np.abs(U - U.T))) if m > 1 else 0.0)
                    y = (0.5 * (U + U.T)).ravel()
                    if float(np.max(np.abs(y))) > ceiling:
                        status = BLOWUP
                        break
                fac = _accept_factor(err, err_prev)
                err_prev = max(err, 1e-4)
                if clipped:
                    h = h if fac >= 1.0 else h_try * fac
                    break
                h = h_try * fac
            else:
                rej += 1
                h = h_try * (_reject_factor(err) if math.isfinite(err) else FAC_MIN)
                if _underflow(h, t):
                    status = STEP_UNDERFLOW
                    break
            if acc + rej >= max_steps:
                status = MAX_STEPS
                break
        if status != OK:
            break
        k = k_next
        out[k] = y
    t_last = t if status != OK else times[k]
    return out, status, k, np.array([acc, rej, asym_max, t_last], dtype=float)
