"""Pure Python/numpy implementations of the numerical kernels.

Used when the compiled ``_ckernels`` extension is unavailable, or when
``LSTMISS_PURE_PYTHON=1`` is set. Signatures and semantics are identical to
the compiled versions; results agree to rounding.

Parameter packing shared by both backends: gate matrices are stacked in the
order forget, input, candidate, output, so ``W`` is ``(4*nx, nu)``, ``U`` is
``(4*nx, nx)`` and ``b`` is ``(4*nx,)``.
"""

import math

import numpy as np

LN10 = math.log(10.0)

# indices into the flat plant parameter vector
Q1, Q2, WA1, WB1, WA2, WB2, WA3, WB3, AREA, CV, PK1, PK2 = range(12)
N_PLANT_PARAMS = 12

PLANT_OK = 0
PLANT_TANK_EMPTY = 1
PLANT_INFEASIBLE = 2


def _sigmoid(t):
    return 1.0 / (1.0 + np.exp(-t))


def lstm_forward(W, U, b, x0, xi0, useq):
    """Iterate the LSTM recursion; returns states at times 0..T."""
    W = np.asarray(W, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    useq = np.asarray(useq, dtype=np.float64)
    nx = U.shape[1]
    T = useq.shape[0]
    xs = np.empty((T + 1, nx))
    xis = np.empty((T + 1, nx))
    xs[0] = x0
    xis[0] = xi0
    x = xs[0].copy()
    xi = xis[0].copy()
    for k in range(T):
        a = W @ useq[k] + U @ xi + b
        f = _sigmoid(a[:nx])
        i = _sigmoid(a[nx:2 * nx])
        c = np.tanh(a[2 * nx:3 * nx])
        o = _sigmoid(a[3 * nx:])
        x = f * x + i * c
        xi = o * np.tanh(x)
        xs[k + 1] = x
        xis[k + 1] = xi
    return xs, xis


def lstm_loss_grad(W, U, b, C, by, x0, xi0, useq, ytarget, washout, trunc):
    """Free-run MSE over times ``washout..T-1`` and its exact gradient.

    ``trunc > 0`` cuts the adjoint at every state index divisible by
    ``trunc`` (window start states are treated as constants).
    """
    W = np.asarray(W, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    by = np.asarray(by, dtype=np.float64)
    useq = np.asarray(useq, dtype=np.float64)
    ytarget = np.asarray(ytarget, dtype=np.float64)
    nx = U.shape[1]
    T = useq.shape[0]
    count = T - washout
    dW = np.zeros_like(W)
    dU = np.zeros_like(U)
    db = np.zeros_like(b)
    dC = np.zeros_like(C)
    dby = np.zeros_like(by)
    if count <= 0:
        return 0.0, dW, dU, db, dC, dby

    xs = np.empty((T, nx))
    xis = np.empty((T, nx))
    gates = np.empty((T, 5, nx))  # f, i, c, o, tanh(x+)
    x = np.array(x0, dtype=np.float64)
    xi = np.array(xi0, dtype=np.float64)
    for k in range(T):
        xs[k] = x
        xis[k] = xi
        if k == T - 1:
            break
        a = W @ useq[k] + U @ xi + b
        f = _sigmoid(a[:nx])
        i = _sigmoid(a[nx:2 * nx])
        c = np.tanh(a[2 * nx:3 * nx])
        o = _sigmoid(a[3 * nx:])
        x = f * x + i * c
        t = np.tanh(x)
        xi = o * t
        gates[k] = (f, i, c, o, t)

    resid = xis @ C.T + by - ytarget
    resid[:washout] = 0.0
    loss = float(np.sum(resid * resid)) / count
    r = (2.0 / count) * resid
    dC = r.T @ xis
    dby = r.sum(axis=0)

    gx = np.zeros(nx)
    gxi = np.zeros(nx)
    da = np.empty(4 * nx)
    for k in range(T - 1, -1, -1):
        gxi = gxi + C.T @ r[k]
        if k == 0:
            break
        if trunc > 0 and k % trunc == 0:
            gx = np.zeros(nx)
            gxi = np.zeros(nx)
            continue
        f, i, c, o, t = gates[k - 1]
        gxp = gx + gxi * o * (1.0 - t * t)
        da[3 * nx:] = gxi * t * o * (1.0 - o)
        da[:nx] = gxp * xs[k - 1] * f * (1.0 - f)
        da[nx:2 * nx] = gxp * c * i * (1.0 - i)
        da[2 * nx:3 * nx] = gxp * i * (1.0 - c * c)
        dW += np.outer(da, useq[k - 1])
        dU += np.outer(da, xis[k - 1])
        db += da
        gx = gxp * f
        gxi = U.T @ da
    return loss, dW, dU, db, dC, dby


def _ph_residual(p, wa, wb, pk1, pk2):
    a = math.exp(LN10 * (p - pk2))
    bb = math.exp(LN10 * (pk1 - p))
    hi = math.exp(LN10 * (p - 14.0))
    lo = math.exp(-LN10 * p)
    den = 1.0 + bb + a
    frac = (1.0 + 2.0 * a) / den
    r = wa + hi - lo + wb * frac
    dfrac = LN10 * (2.0 * a * den - (1.0 + 2.0 * a) * (a - bb)) / (den * den)
    dr = LN10 * (hi + lo) + wb * dfrac
    return r, dr


def ph_solve(wa, wb, pk1, pk2):
    """Bracketed Newton on [0, 14]; returns NaN when no sign change."""
    lo, hi = 0.0, 14.0
    rlo, _ = _ph_residual(lo, wa, wb, pk1, pk2)
    rhi, _ = _ph_residual(hi, wa, wb, pk1, pk2)
    if not (rlo <= 0.0 <= rhi):
        return math.nan
    if rlo == 0.0:
        return lo
    if rhi == 0.0:
        return hi
    p = 7.0
    for _ in range(200):
        r, dr = _ph_residual(p, wa, wb, pk1, pk2)
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
        if not (lo < pn < hi):
            pn = 0.5 * (lo + hi)
        if abs(pn - p) <= 1e-14 or hi - lo <= 1e-14:
            return pn
        p = pn
    return p


def _plant_rhs(par, wa, wb, h, q3):
    q1 = par[Q1]
    q2 = par[Q2]
    vol = par[AREA] * h
    dwa = (q1 * (par[WA1] - wa) + q2 * (par[WA2] - wa) + q3 * (par[WA3] - wa)) / vol
    dwb = (q1 * (par[WB1] - wb) + q2 * (par[WB2] - wb) + q3 * (par[WB3] - wb)) / vol
    dh = (q1 + q2 + q3 - par[CV] * math.sqrt(h)) / par[AREA]
    return dwa, dwb, dh


def plant_simulate(par, state0, q3seq, ts, substeps):
    """RK4 integration of the mixing balances; pH at every sample.

    Returns ``(states, ph, status, index)``; on failure ``index`` is the
    sample at which it occurred and the arrays are filled up to there.
    """
    par = [float(v) for v in par]
    q3seq = np.asarray(q3seq, dtype=np.float64)
    T = q3seq.shape[0]
    states = np.full((T + 1, 3), np.nan)
    ph = np.full(T + 1, np.nan)
    wa, wb, h = (float(v) for v in state0)
    dt = ts / substeps
    for k in range(T + 1):
        if not h > 0.0:
            return states, ph, PLANT_TANK_EMPTY, k
        states[k] = (wa, wb, h)
        pk = ph_solve(wa, wb, par[PK1], par[PK2])
        if pk != pk:
            return states, ph, PLANT_INFEASIBLE, k
        ph[k] = pk
        if k == T:
            break
        q3 = q3seq[k]
        for _ in range(substeps):
            k1 = _plant_rhs(par, wa, wb, h, q3)
            h2 = h + 0.5 * dt * k1[2]
            if not h2 > 0.0:
                return states, ph, PLANT_TANK_EMPTY, k + 1
            k2 = _plant_rhs(par, wa + 0.5 * dt * k1[0], wb + 0.5 * dt * k1[1], h2, q3)
            h3 = h + 0.5 * dt * k2[2]
            if not h3 > 0.0:
                return states, ph, PLANT_TANK_EMPTY, k + 1
            k3 = _plant_rhs(par, wa + 0.5 * dt * k2[0], wb + 0.5 * dt * k2[1], h3, q3)
            h4 = h + dt * k3[2]
            if not h4 > 0.0:
                return states, ph, PLANT_TANK_EMPTY, k + 1
            k4 = _plant_rhs(par, wa + dt * k3[0], wb + dt * k3[1], h4, q3)
            wa += dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
            wb += dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
            h += dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
    return states, ph, PLANT_OK, -1
