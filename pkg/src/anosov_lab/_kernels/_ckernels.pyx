# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; same contracts and step control as ``_pure``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, exp, pow, sin, cos, sinh, cosh, isfinite
from libc.stdlib cimport malloc, free

cnp.import_array()

DEF NSTAGE = 7

cdef int OK = 0, CHART_EXIT = 1, STEP_UNDERFLOW = 2, MAX_STEPS = 3, BLOWUP = 4
cdef int MODE_JACOBI = 0, MODE_RICCATI = 1, MODE_LINEAR = 2
cdef int GEOM_CONFORMAL = 0, GEOM_WARPED = 1

cdef double SAFETY = 0.9
cdef double BETA = 0.04
cdef double ALPHA = 0.2 - 0.75 * 0.04
cdef double FAC_MIN = 0.2, FAC_MAX = 5.0
cdef double STRETCH = 1.01

cdef double C2 = 1.0 / 5.0, C3 = 3.0 / 10.0, C4 = 4.0 / 5.0, C5 = 8.0 / 9.0
cdef double A21 = 1.0 / 5.0
cdef double A31 = 3.0 / 40.0, A32 = 9.0 / 40.0
cdef double A41 = 44.0 / 45.0, A42 = -56.0 / 15.0, A43 = 32.0 / 9.0
cdef double A51 = 19372.0 / 6561.0, A52 = -25360.0 / 2187.0, A53 = 64448.0 / 6561.0, A54 = -212.0 / 729.0
cdef double A61 = 9017.0 / 3168.0, A62 = -355.0 / 33.0, A63 = 46732.0 / 5247.0, A64 = 49.0 / 176.0, A65 = -5103.0 / 18656.0
cdef double B1 = 35.0 / 384.0, B3 = 500.0 / 1113.0, B4 = 125.0 / 192.0, B5 = -2187.0 / 6784.0, B6 = 11.0 / 84.0
cdef double E1 = 35.0 / 384.0 - 5179.0 / 57600.0
cdef double E3 = 500.0 / 1113.0 - 7571.0 / 16695.0
cdef double E4 = 125.0 / 192.0 - 393.0 / 640.0
cdef double E5 = -2187.0 / 6784.0 + 92097.0 / 339200.0
cdef double E6 = 11.0 / 84.0 - 187.0 / 2100.0
cdef double E7 = -1.0 / 40.0


ctypedef void (*rhs_t)(void* ctx, double t, double* y, double* out) noexcept nogil


cdef struct Work:
    int n
    double* k      # NSTAGE * n
    double* tmp
    double* y5
    double* err


cdef int work_alloc(Work* w, int n):
    w.n = n
    w.k = <double*> malloc(NSTAGE * n * sizeof(double))
    w.tmp = <double*> malloc(n * sizeof(double))
    w.y5 = <double*> malloc(n * sizeof(double))
    w.err = <double*> malloc(n * sizeof(double))
    if w.k == NULL or w.tmp == NULL or w.y5 == NULL or w.err == NULL:
        raise MemoryError()
    return 0


cdef void work_free(Work* w) noexcept:
    free(w.k)
    free(w.tmp)
    free(w.y5)
    free(w.err)


cdef double dp_step(rhs_t f, void* ctx, double t, double* y, double h, double tol, Work* w) noexcept nogil:
    """One Dormand-Prince attempt; leaves the 5th-order result in w.y5, returns error norm."""
    cdef int n = w.n, i
    cdef double* k1 = w.k
    cdef double* k2 = w.k + n
    cdef double* k3 = w.k + 2 * n
    cdef double* k4 = w.k + 3 * n
    cdef double* k5 = w.k + 4 * n
    cdef double* k6 = w.k + 5 * n
    cdef double* k7 = w.k + 6 * n
    cdef double* tmp = w.tmp
    cdef double acc = 0.0, sc, a, b, e
    f(ctx, t, y, k1)
    for i in range(n):
        tmp[i] = y[i] + h * (A21 * k1[i])
    f(ctx, t + C2 * h, tmp, k2)
    for i in range(n):
        tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i])
    f(ctx, t + C3 * h, tmp, k3)
    for i in range(n):
        tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
    f(ctx, t + C4 * h, tmp, k4)
    for i in range(n):
        tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
    f(ctx, t + C5 * h, tmp, k5)
    for i in range(n):
        tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
    f(ctx, t + h, tmp, k6)
    for i in range(n):
        w.y5[i] = y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i])
    f(ctx, t + h, w.y5, k7)
    for i in range(n):
        e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
        a = fabs(y[i])
        b = fabs(w.y5[i])
        sc = tol + tol * (a if a > b else b)
        acc += (e / sc) * (e / sc)
        if not isfinite(w.y5[i]):
            return 1e300
    if acc != acc:
        return 1e300
    return sqrt(acc / n)


cdef inline double accept_factor(double err, double err_prev) noexcept nogil:
    cdef double fac
    if err == 0.0:
        return FAC_MAX
    fac = SAFETY * pow(err, -ALPHA) * pow(err_prev, BETA)
    if fac > FAC_MAX:
        return FAC_MAX
    if fac < FAC_MIN:
        return FAC_MIN
    return fac


cdef inline double reject_factor(double err) noexcept nogil:
    cdef double fac
    if err >= 1e300:
        return FAC_MIN
    fac = SAFETY * pow(err, -0.2)
    return fac if fac > FAC_MIN else FAC_MIN


# ---------------------------------------------------------------------------
# geodesic + frame, 2-D built-in families
# ---------------------------------------------------------------------------

cdef struct GeoCtx:
    int kind
    double* p
    int np


cdef inline void bump_grad(double px, double py, double x0, double y0, double rho, double amp,
                           double* psi, double* bx, double* by) noexcept nogil:
    cdef double dx = px - x0, dy = py - y0, rho2 = rho * rho
    cdef double u = (dx * dx + dy * dy) / rho2, wv, b, b1
    if u >= 1.0 or amp == 0.0:
        psi[0] = 0.0
        bx[0] = 0.0
        by[0] = 0.0
        return
    wv = 1.0 - u
    b = exp(1.0 - 1.0 / wv)
    b1 = -b / (wv * wv)
    psi[0] = amp * b
    bx[0] = amp * b1 * 2.0 * dx / rho2
    by[0] = amp * b1 * 2.0 * dy / rho2


cdef inline void warp(double r, double* p, double* f, double* df) noexcept nogil:
    cdef int k, nt
    cdef double a, b
    if p[0] == 1.0:
        f[0] = sin(r)
        df[0] = cos(r)
        return
    f[0] = 0.0
    df[0] = 0.0
    nt = <int> p[1]
    for k in range(nt):
        a = p[2 + 2 * k]
        b = p[3 + 2 * k]
        f[0] += a * cosh(b * r)
        df[0] += a * b * sinh(b * r)


cdef void geo_rhs(void* vctx, double t, double* s, double* out) noexcept nogil:
    cdef GeoCtx* ctx = <GeoCtx*> vctx
    cdef double* p = ctx.p
    cdef double psi, bx, by, sx, sy, sv, sV, vv, vV, f, df, ff, q
    if ctx.kind == GEOM_CONFORMAL:
        bump_grad(s[0], s[1], p[2], p[3], p[4], p[5], &psi, &bx, &by)
        sx = p[1] * bx
        sy = p[1] * by - 1.0 / s[1]
        sv = sx * s[2] + sy * s[3]
        sV = sx * s[4] + sy * s[5]
        vv = s[2] * s[2] + s[3] * s[3]
        vV = s[2] * s[4] + s[3] * s[5]
        out[0] = s[2]
        out[1] = s[3]
        out[2] = -2.0 * s[2] * sv + vv * sx
        out[3] = -2.0 * s[3] * sv + vv * sy
        out[4] = -(s[2] * sV + s[4] * sv - vV * sx)
        out[5] = -(s[3] * sV + s[5] * sv - vV * sy)
    else:
        warp(s[0], p, &f, &df)
        ff = f * df
        q = df / f
        out[0] = s[2]
        out[1] = s[3]
        out[2] = ff * s[3] * s[3]
        out[3] = -2.0 * q * s[2] * s[3]
        out[4] = ff * s[3] * s[5]
        out[5] = -q * (s[2] * s[5] + s[3] * s[4])


cdef void geo_post(GeoCtx* ctx, double* s, double* speed_drift, double* frame_drift) noexcept nogil:
    cdef double* p = ctx.p
    cdef double g0, g1, psi, bx, by, f, df, vv, inv, Vv, VV, d1, d2
    if ctx.kind == GEOM_CONFORMAL:
        bump_grad(s[0], s[1], p[2], p[3], p[4], p[5], &psi, &bx, &by)
        g0 = exp(2.0 * p[1] * psi) / ((p[0] * s[1]) * (p[0] * s[1]))
        g1 = g0
    else:
        warp(s[0], p, &f, &df)
        g0 = 1.0
        g1 = f * f
    vv = g0 * s[2] * s[2] + g1 * s[3] * s[3]
    speed_drift[0] = fabs(vv - 1.0)
    inv = 1.0 / sqrt(vv)
    s[2] *= inv
    s[3] *= inv
    Vv = g0 * s[4] * s[2] + g1 * s[5] * s[3]
    VV = g0 * s[4] * s[4] + g1 * s[5] * s[5]
    d1 = fabs(VV - 1.0)
    d2 = fabs(Vv)
    frame_drift[0] = d1 if d1 > d2 else d2
    s[4] -= Vv * s[2]
    s[5] -= Vv * s[3]
    VV = g0 * s[4] * s[4] + g1 * s[5] * s[5]
    inv = 1.0 / sqrt(VV)
    s[4] *= inv
    s[5] *= inv


cdef bint geo_inside(GeoCtx* ctx, double* s) noexcept nogil:
    cdef int i
    for i in range(6):
        if not isfinite(s[i]):
            return False
    if ctx.kind == GEOM_CONFORMAL:
        return s[1] > 0.0
    if ctx.p[0] == 1.0:
        return s[0] > 0.0 and s[0] < 3.141592653589793
    return True


def geodesic_2d(int kind, params, y0, double t1, double tol, double h_max, stops,
                long max_steps=1000000):
    """Compiled twin of ``_pure.geodesic_2d``."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] par = np.ascontiguousarray(params, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] st = np.ascontiguousarray(stops, dtype=np.float64)
    cdef double[6] y
    cdef GeoCtx ctx
    cdef Work w
    cdef int i, status = OK
    cdef long n_acc = 0, n_rej = 0, cap = 1024, count = 1
    cdef double t = 0.0, direction, span, h, err, err_prev = 1e-4, fac, target, remaining, h_try
    cdef double sd, fd, sd_max = 0.0, fd_max = 0.0
    cdef bint clipped
    cdef Py_ssize_t n_stops, ti
    cdef cnp.ndarray[cnp.float64_t, ndim=1] times_arr
    cdef cnp.ndarray[cnp.float64_t, ndim=2] states_arr
    cdef list targets

    y0a = np.asarray(y0, dtype=np.float64)
    for i in range(6):
        y[i] = y0a[i]
    ctx.kind = kind
    ctx.p = &par[0]
    ctx.np = par.shape[0]
    direction = 1.0 if t1 >= 0.0 else -1.0
    span = fabs(t1)
    times_arr = np.empty(cap)
    states_arr = np.empty((cap, 6))
    times_arr[0] = 0.0
    for i in range(6):
        states_arr[0, i] = y[i]
    if span == 0.0:
        return times_arr[:1].copy(), states_arr[:1].copy(), OK, np.array([0.0, 0.0, 0.0, 0.0])

    targets = [float(s) for s in st if direction * s > 0 and direction * (t1 - s) > 0] + [t1]
    n_stops = len(targets)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] tg = np.array(targets, dtype=np.float64)
    work_alloc(&w, 6)
    h = min(h_max, span, 0.01)
    ti = 0
    try:
        while ti < n_stops:
            target = tg[ti]
            remaining = fabs(target - t)
            clipped = h * STRETCH >= remaining
            h_try = remaining if clipped else h
            err = dp_step(geo_rhs, &ctx, t, y, direction * h_try, tol, &w)
            if err <= 1.0:
                t = target if clipped else t + direction * h_try
                for i in range(6):
                    y[i] = w.y5[i]
                geo_post(&ctx, y, &sd, &fd)
                if sd > sd_max:
                    sd_max = sd
                if fd > fd_max:
                    fd_max = fd
                if not geo_inside(&ctx, y):
                    status = CHART_EXIT
                    break
                if count == cap:
                    cap *= 2
                    times_arr = np.resize(times_arr, cap)
                    states_arr = np.resize(states_arr, (cap, 6))
                times_arr[count] = t
                for i in range(6):
                    states_arr[count, i] = y[i]
                count += 1
                n_acc += 1
                fac = accept_factor(err, err_prev)
                err_prev = err if err > 1e-4 else 1e-4
                if clipped:
                    ti += 1
                    if fac < 1.0:
                        h = h_try * fac
                else:
                    h = h_try * fac
                if h > h_max:
                    h = h_max
            else:
                n_rej += 1
                h = h_try * reject_factor(err)
                if h < 1e-14 * (fabs(t) if fabs(t) > 1.0 else 1.0):
                    status = STEP_UNDERFLOW
                    break
            if n_acc + n_rej >= max_steps:
                status = MAX_STEPS
                break
    finally:
        work_free(&w)
    stats = np.array([n_acc, n_rej, sd_max, fd_max], dtype=np.float64)
    return times_arr[:count].copy(), states_arr[:count].copy(), status, stats


# ---------------------------------------------------------------------------
# matrix ODEs on tabulated coefficients
# ---------------------------------------------------------------------------

cdef struct LinCtx:
    int mode
    int m
    int q
    double t_lo
    double t_hi
    double* A_lo
    double* A_hi
    double* D_lo
    double* D_hi
    double* A      # m*m scratch


cdef inline void hermite(LinCtx* c, double t) noexcept nogil:
    cdef double H = c.t_hi - c.t_lo
    cdef double s = (t - c.t_lo) / H
    cdef double s2 = s * s, s3 = s * s * s
    cdef double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s, h01 = -2 * s3 + 3 * s2, h11 = s3 - s2
    cdef int i, mm = c.m * c.m
    for i in range(mm):
        c.A[i] = h00 * c.A_lo[i] + h10 * H * c.D_lo[i] + h01 * c.A_hi[i] + h11 * H * c.D_hi[i]


cdef void lin_rhs(void* vctx, double t, double* s, double* out) noexcept nogil:
    cdef LinCtx* c = <LinCtx*> vctx
    cdef int m = c.m, q = c.q, i, j, k
    cdef double acc
    hermite(c, t)
    if c.mode == MODE_JACOBI:
        for i in range(m * q):
            out[i] = s[m * q + i]
        for i in range(m):
            for j in range(q):
                acc = 0.0
                for k in range(m):
                    acc += c.A[i * m + k] * s[k * q + j]
                out[m * q + i * q + j] = -acc
    elif c.mode == MODE_RICCATI:
        for i in range(m):
            for j in range(m):
                acc = 0.0
                for k in range(m):
                    acc += s[i * m + k] * s[k * m + j]
                out[i * m + j] = -acc - c.A[i * m + j]
    else:
        for i in range(m):
            for j in range(q):
                acc = 0.0
                for k in range(m):
                    acc += c.A[i * m + k] * s[k * q + j]
                out[i * q + j] = acc


def linear_nodes(int mode, times, coef, dcoef, state0, int m, int q, int i_start, int i_end,
                 double tol, double ceiling=1e12, long max_steps=10000000):
    """Compiled twin of ``_pure.linear_nodes``."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] tt = np.ascontiguousarray(times, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=3] cf = np.ascontiguousarray(coef, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=3] dc = np.ascontiguousarray(dcoef, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y = np.array(state0, dtype=np.float64)
    cdef int n = y.shape[0], i, j, status = OK
    cdef Py_ssize_t K = tt.shape[0], k, k_next, lo, hi, step
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.full((K, n), np.nan)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] scratch = np.empty(m * m)
    cdef LinCtx ctx
    cdef Work w
    cdef long acc = 0, rej = 0
    cdef double asym_max = 0.0, h = -1.0, err_prev = 1e-4, err, fac, t, ta, tb, span, direction
    cdef double remaining, h_try, a, mx, u1, u2
    cdef bint clipped

    for i in range(n):
        out[i_start, i] = y[i]
    step = 1 if i_end >= i_start else -1
    ctx.mode = mode
    ctx.m = m
    ctx.q = q
    ctx.A = &scratch[0]
    work_alloc(&w, n)
    k = i_start
    try:
        while k != i_end:
            k_next = k + step
            ta = tt[k]
            tb = tt[k_next]
            if step > 0:
                lo = k
                hi = k_next
            else:
                lo = k_next
                hi = k
            ctx.t_lo = tt[lo]
            ctx.t_hi = tt[hi]
            ctx.A_lo = &cf[lo, 0, 0]
            ctx.A_hi = &cf[hi, 0, 0]
            ctx.D_lo = &dc[lo, 0, 0]
            ctx.D_hi = &dc[hi, 0, 0]
            span = fabs(tb - ta)
            direction = 1.0 if tb > ta else -1.0
            if h < 0.0:
                h = span if span < 0.01 else 0.01
                if span == 0.0:
                    h = 0.01
            t = ta
            while True:
                remaining = fabs(tb - t)
                if remaining == 0.0:
                    break
                clipped = h * STRETCH >= remaining
                h_try = remaining if clipped else h
                err = dp_step(lin_rhs, &ctx, t, &y[0], direction * h_try, tol, &w)
                if err <= 1.0:
                    t = tb if clipped else t + direction * h_try
                    for i in range(n):
                        y[i] = w.y5[i]
                    acc += 1
                    if mode == MODE_RICCATI:
                        mx = 0.0
                        for i in range(m):
                            for j in range(i + 1, m):
                                u1 = y[i * m + j]
                                u2 = y[j * m + i]
                                a = fabs(u1 - u2)
                                if a > asym_max:
                                    asym_max = a
                                y[i * m + j] = 0.5 * (u1 + u2)
                                y[j * m + i] = y[i * m + j]
                        for i in range(n):
                            if fabs(y[i]) > mx:
                                mx = fabs(y[i])
                        if mx > ceiling:
                            status = BLOWUP
                            break
                    fac = accept_factor(err, err_prev)
                    err_prev = err if err > 1e-4 else 1e-4
                    if clipped:
                        if fac < 1.0:
                            h = h_try * fac
                        break
                    h = h_try * fac
                else:
                    rej += 1
                    h = h_try * reject_factor(err)
                    if h < 1e-14 * (fabs(t) if fabs(t) > 1.0 else 1.0):
                        status = STEP_UNDERFLOW
                        break
                if acc + rej >= max_steps:
                    status = MAX_STEPS
                    break
            if status != OK:
                break
            k = k_next
            for i in range(n):
                out[k, i] = y[i]
    finally:
        work_free(&w)
    t_last = t if status != OK else tt[k]
    return out, status, k, np.array([acc, rej, asym_max, t_last], dtype=np.float64)
