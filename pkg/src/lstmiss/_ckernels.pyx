# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: LSTM forward/BPTT and the pH plant integrator.

Mirrors ``_pure`` exactly in signatures and semantics. Every loop runs
without the GIL so callers may fan scenarios out over threads.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh, sqrt, log, fabs, NAN

cnp.import_array()

cdef double LN10 = log(10.0)

cdef enum:
    Q1 = 0
    Q2 = 1
    WA1 = 2
    WB1 = 3
    WA2 = 4
    WB2 = 5
    WA3 = 6
    WB3 = 7
    AREA = 8
    CV = 9
    PK1 = 10
    PK2 = 11

PLANT_OK = 0
PLANT_TANK_EMPTY = 1
PLANT_INFEASIBLE = 2


cdef inline double _sig(double t) noexcept nogil:
    return 1.0 / (1.0 + exp(-t))


cdef void _gates(const double[:, ::1] W, const double[:, ::1] U, const double[::1] b,
                 const double[::1] u, const double[::1] xi, double* a,
                 Py_ssize_t nx, Py_ssize_t nu) noexcept nogil:
    cdef Py_ssize_t r, j
    cdef double s
    for r in range(4 * nx):
        s = 0.0
        for j in range(nu):
            s = s + W[r, j] * u[j]
        for j in range(nx):
            s = s + U[r, j] * xi[j]
        a[r] = s + b[r]


def lstm_forward(W, U, b, x0, xi0, useq):
    """Iterate the LSTM recursion; returns states at times 0..T."""
    cdef const double[:, ::1] Wv = np.ascontiguousarray(W, dtype=np.float64)
    cdef const double[:, ::1] Uv = np.ascontiguousarray(U, dtype=np.float64)
    cdef const double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef const double[:, ::1] uv = np.ascontiguousarray(useq, dtype=np.float64)
    cdef Py_ssize_t nx = Uv.shape[1]
    cdef Py_ssize_t nu = Wv.shape[1]
    cdef Py_ssize_t T = uv.shape[0]
    xs_arr = np.empty((T + 1, nx))
    xis_arr = np.empty((T + 1, nx))
    cdef double[:, ::1] xs = xs_arr
    cdef double[:, ::1] xis = xis_arr
    xs_arr[0] = x0
    xis_arr[0] = xi0
    a_arr = np.empty(4 * nx)
    cdef double[::1] a = a_arr
    cdef Py_ssize_t k, j
    cdef double f, ig, c, o, xn
    with nogil:
        for k in range(T):
            _gates(Wv, Uv, bv, uv[k], xis[k], &a[0], nx, nu)
            for j in range(nx):
                f = _sig(a[j])
                ig = _sig(a[nx + j])
                c = tanh(a[2 * nx + j])
                o = _sig(a[3 * nx + j])
                xn = f * xs[k, j] + ig * c
                xs[k + 1, j] = xn
                xis[k + 1, j] = o * tanh(xn)
    return xs_arr, xis_arr


def lstm_loss_grad(W, U, b, C, by, x0, xi0, useq, ytarget, Py_ssize_t washout, Py_ssize_t trunc):
    """Free-run MSE over times ``washout..T-1`` and its exact gradient."""
    cdef const double[:, ::1] Wv = np.ascontiguousarray(W, dtype=np.float64)
    cdef const double[:, ::1] Uv = np.ascontiguousarray(U, dtype=np.float64)
    cdef const double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef const double[:, ::1] Cv = np.ascontiguousarray(C, dtype=np.float64)
    cdef const double[::1] byv = np.ascontiguousarray(by, dtype=np.float64)
    cdef const double[:, ::1] uv = np.ascontiguousarray(useq, dtype=np.float64)
    cdef const double[:, ::1] yv = np.ascontiguousarray(ytarget, dtype=np.float64)
    cdef Py_ssize_t nx = Uv.shape[1]
    cdef Py_ssize_t nu = Wv.shape[1]
    cdef Py_ssize_t ny = Cv.shape[0]
    cdef Py_ssize_t T = uv.shape[0]
    cdef Py_ssize_t count = T - washout

    dW_arr = np.zeros((4 * nx, nu))
    dU_arr = np.zeros((4 * nx, nx))
    db_arr = np.zeros(4 * nx)
    dC_arr = np.zeros((ny, nx))
    dby_arr = np.zeros(ny)
    if count <= 0:
        return 0.0, dW_arr, dU_arr, db_arr, dC_arr, dby_arr
    cdef double[:, ::1] dW = dW_arr
    cdef double[:, ::1] dU = dU_arr
    cdef double[::1] db = db_arr
    cdef double[:, ::1] dC = dC_arr
    cdef double[::1] dby = dby_arr

    xs_arr = np.empty((T, nx))
    xis_arr = np.empty((T, nx))
    gates_arr = np.empty((T, 5, nx))
    resid_arr = np.zeros((T, ny))
    cdef double[:, ::1] xs = xs_arr
    cdef double[:, ::1] xis = xis_arr
    cdef double[:, :, ::1] g = gates_arr
    cdef double[:, ::1] r = resid_arr
    xs_arr[0] = x0
    xis_arr[0] = xi0

    work = np.zeros(7 * nx)
    cdef double[::1] wk = work
    cdef double* a = &wk[0]
    cdef double* gx = &wk[4 * nx]
    cdef double* gxi = &wk[5 * nx]
    cdef double* gxp = &wk[6 * nx]
    cdef Py_ssize_t k, j, m
    cdef double f, ig, c, o, t, xn, s, loss = 0.0, scale
    with nogil:
        for k in range(T - 1):
            _gates(Wv, Uv, bv, uv[k], xis[k], a, nx, nu)
            for j in range(nx):
                f = _sig(a[j])
                ig = _sig(a[nx + j])
                c = tanh(a[2 * nx + j])
                o = _sig(a[3 * nx + j])
                xn = f * xs[k, j] + ig * c
                t = tanh(xn)
                xs[k + 1, j] = xn
                xis[k + 1, j] = o * t
                g[k, 0, j] = f
                g[k, 1, j] = ig
                g[k, 2, j] = c
                g[k, 3, j] = o
                g[k, 4, j] = t

        for k in range(washout, T):
            for m in range(ny):
                s = byv[m]
                for j in range(nx):
                    s = s + Cv[m, j] * xis[k, j]
                s = s - yv[k, m]
                loss = loss + s * s
                r[k, m] = s
        loss = loss / count
        scale = 2.0 / count
        for k in range(washout, T):
            for m in range(ny):
                r[k, m] = scale * r[k, m]
                dby[m] = dby[m] + r[k, m]
                for j in range(nx):
                    dC[m, j] = dC[m, j] + r[k, m] * xis[k, j]

        for j in range(nx):
            gx[j] = 0.0
            gxi[j] = 0.0
        k = T - 1
        while k >= 0:
            for j in range(nx):
                s = 0.0
                for m in range(ny):
                    s = s + Cv[m, j] * r[k, m]
                gxi[j] = gxi[j] + s
            if k == 0:
                break
            if trunc > 0 and k % trunc == 0:
                for j in range(nx):
                    gx[j] = 0.0
                    gxi[j] = 0.0
                k = k - 1
                continue
            for j in range(nx):
                f = g[k - 1, 0, j]
                ig = g[k - 1, 1, j]
                c = g[k - 1, 2, j]
                o = g[k - 1, 3, j]
                t = g[k - 1, 4, j]
                gxp[j] = gx[j] + gxi[j] * o * (1.0 - t * t)
                a[3 * nx + j] = gxi[j] * t * o * (1.0 - o)
                a[j] = gxp[j] * xs[k - 1, j] * f * (1.0 - f)
                a[nx + j] = gxp[j] * c * ig * (1.0 - ig)
                a[2 * nx + j] = gxp[j] * ig * (1.0 - c * c)
                gx[j] = gxp[j] * f
            for m in range(4 * nx):
                for j in range(nu):
                    dW[m, j] = dW[m, j] + a[m] * uv[k - 1, j]
                for j in range(nx):
                    dU[m, j] = dU[m, j] + a[m] * xis[k - 1, j]
                db[m] = db[m] + a[m]
            for j in range(nx):
                s = 0.0
                for m in range(4 * nx):
                    s = s + Uv[m, j] * a[m]
                gxi[j] = s
            k = k - 1
    return loss, dW_arr, dU_arr, db_arr, dC_arr, dby_arr


cdef inline double _ph_residual(double p, double wa, double wb, double pk1, double pk2,
                                double* dr) noexcept nogil:
    cdef double a = exp(LN10 * (p - pk2))
    cdef double bb = exp(LN10 * (pk1 - p))
    cdef double hi = exp(LN10 * (p - 14.0))
    cdef double lo = exp(-LN10 * p)
    cdef double den = 1.0 + bb + a
    cdef double frac = (1.0 + 2.0 * a) / den
    cdef double dfrac = LN10 * (2.0 * a * den - (1.0 + 2.0 * a) * (a - bb)) / (den * den)
    dr[0] = LN10 * (hi + lo) + wb * dfrac
    return wa + hi - lo + wb * frac


cdef double _ph_solve(double wa, double wb, double pk1, double pk2) noexcept nogil:
    cdef double lo = 0.0, hi = 14.0, p = 7.0, pn, r, dr
    cdef double rlo = _ph_residual(lo, wa, wb, pk1, pk2, &dr)
    cdef double rhi = _ph_residual(hi, wa, wb, pk1, pk2, &dr)
    cdef int it
    if not (rlo <= 0.0 and 0.0 <= rhi):
        return NAN
    if rlo == 0.0:
        return lo
    if rhi == 0.0:
        return hi
    for it in range(200):
        r = _ph_residual(p, wa, wb, pk1, pk2, &dr)
        if r == 0.0:
            return p
        if r < 0.0:
            lo = p
        else:
            hi = p
        if dr > 0.0:
            pn = p - r / dr
        else:
            pn = 0.5 * (lo + hi)
        if not (lo < pn and pn < hi):
            pn = 0.5 * (lo + hi)
        if fabs(pn - p) <= 1e-14 or hi - lo <= 1e-14:
            return pn
        p = pn
    return p


def ph_solve(double wa, double wb, double pk1, double pk2):
    """Bracketed Newton on [0, 14]; returns NaN when no sign change."""
    return _ph_solve(wa, wb, pk1, pk2)


cdef inline void _rhs(const double* par, double wa, double wb, double h, double q3,
                      double* out) noexcept nogil:
    cdef double q1 = par[Q1]
    cdef double q2 = par[Q2]
    cdef double vol = par[AREA] * h
    out[0] = (q1 * (par[WA1] - wa) + q2 * (par[WA2] - wa) + q3 * (par[WA3] - wa)) / vol
    out[1] = (q1 * (par[WB1] - wb) + q2 * (par[WB2] - wb) + q3 * (par[WB3] - wb)) / vol
    out[2] = (q1 + q2 + q3 - par[CV] * sqrt(h)) / par[AREA]


def plant_simulate(par, state0, q3seq, double ts, int substeps):
    """RK4 integration of the mixing balances; pH at every sample."""
    cdef const double[::1] pv = np.ascontiguousarray(par, dtype=np.float64)
    cdef const double[::1] qv = np.ascontiguousarray(q3seq, dtype=np.float64)
    cdef Py_ssize_t T = qv.shape[0]
    states_arr = np.full((T + 1, 3), np.nan)
    ph_arr = np.full(T + 1, np.nan)
    cdef double[:, ::1] st = states_arr
    cdef double[::1] ph = ph_arr
    cdef double wa = float(state0[0]), wb = float(state0[1]), h = float(state0[2])
    cdef double dt = ts / substeps
    cdef double k1[3]
    cdef double k2[3]
    cdef double k3[3]
    cdef double k4[3]
    cdef double q3, pk, h2
    cdef const double* pp = &pv[0]
    cdef Py_ssize_t k
    cdef int s
    cdef int status = 0
    cdef Py_ssize_t where = -1
    with nogil:
        for k in range(T + 1):
            if not h > 0.0:
                status = 1
                where = k
                break
            st[k, 0] = wa
            st[k, 1] = wb
            st[k, 2] = h
            pk = _ph_solve(wa, wb, pp[PK1], pp[PK2])
            if pk != pk:
                status = 2
                where = k
                break
            ph[k] = pk
            if k == T:
                break
            q3 = qv[k]
            for s in range(substeps):
                _rhs(pp, wa, wb, h, q3, k1)
                h2 = h + 0.5 * dt * k1[2]
                if not h2 > 0.0:
                    status = 1
                    break
                _rhs(pp, wa + 0.5 * dt * k1[0], wb + 0.5 * dt * k1[1], h2, q3, k2)
                h2 = h + 0.5 * dt * k2[2]
                if not h2 > 0.0:
                    status = 1
                    break
                _rhs(pp, wa + 0.5 * dt * k2[0], wb + 0.5 * dt * k2[1], h2, q3, k3)
                h2 = h + dt * k3[2]
                if not h2 > 0.0:
                    status = 1
                    break
                _rhs(pp, wa + dt * k3[0], wb + dt * k3[1], h2, q3, k4)
                wa = wa + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
                wb = wb + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
                h = h + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
            if status != 0:
                where = k + 1
                break
    return states_arr, ph_arr, status, where
