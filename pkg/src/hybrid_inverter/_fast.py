"""Compiled kernels for the time-stepping hot loops.

These mirror :mod:`hybrid_inverter.dynamics` and the guard functions of
:mod:`hybrid_inverter.hybrid` on packed parameter/grid arrays so that long
integrations and finite-difference batches run at compiled speed.  The
numpy implementations stay the reference; the test-suite checks that both
agree to round-off.

Batches are laid out row-major as ``(m, n)``: one state per row.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .grid import GridSignal
from .params import InverterParams

KIND_GFL, KIND_GFM, KIND_CONT = 0, 1, 2

(R_F, L_F, R_G, L_G, KP_PLL, KI_PLL, KP_C, KI_C, KP_P, KI_P, KP_Q, KI_Q, KP_V, KI_V, M_P, N_Q,
 V_0, OMEGA_0, OMEGA_B, P_REF, Q_REF, P_0, Q_0, R_LINE, L_LINE, FILTERED, CONVENTIONAL, OMEGA_F,
 V_LO, V_HI, OMEGA_TH, K_GAIN, V_SWITCH, T_HOLD) = range(34)
N_PARAMS = 34

# algebraic output slots
A_VD, A_VQ, A_IDR, A_IQR, A_P, A_Q, A_PM, A_QM, A_OMEGA, A_VREF, A_VGD, A_VGQ = range(12)
N_ALG = 12

STATUS_DONE, STATUS_EVENT, STATUS_ENTRY, STATUS_FAIL = 0, 1, 2, 3


def pack_params(params: InverterParams, k_gain: float = 1.0, v_switch: float | None = None) -> np.ndarray:
    pv = np.zeros(N_PARAMS)
    pv[R_F], pv[L_F], pv[R_G], pv[L_G] = params.r_f, params.l_f, params.r_g, params.l_g
    pv[KP_PLL], pv[KI_PLL], pv[KP_C], pv[KI_C] = params.k_p_pll, params.k_i_pll, params.k_p_c, params.k_i_c
    pv[KP_P], pv[KI_P], pv[KP_Q], pv[KI_Q] = params.k_p_p, params.k_i_p, params.k_p_q, params.k_i_q
    pv[KP_V], pv[KI_V], pv[M_P], pv[N_Q] = params.k_p_v, params.k_i_v, params.m_p, params.n_q
    pv[V_0], pv[OMEGA_0], pv[OMEGA_B] = params.v_0, params.omega_0, params.omega_b
    pv[P_REF], pv[Q_REF], pv[P_0], pv[Q_0] = params.p_ref, params.q_ref, params.p_0, params.q_0
    pv[R_LINE], pv[L_LINE] = params.r_line, params.l_line
    pv[FILTERED] = 1.0 if params.filtered else 0.0
    pv[CONVENTIONAL] = 1.0 if params.conventional_pairing else 0.0
    pv[OMEGA_F] = params.omega_f
    pv[V_LO], pv[V_HI], pv[OMEGA_TH] = params.v_th_lo, params.v_th_hi, params.omega_th
    pv[K_GAIN] = k_gain
    pv[V_SWITCH] = params.v_th_lo if v_switch is None else v_switch
    pv[T_HOLD] = params.T_hold
    return pv


def pack_grid(grid: GridSignal) -> np.ndarray:
    return np.ascontiguousarray(np.vstack([
        grid._t, grid._v, grid._a, grid._w, grid._ramp,
        grid._v_prev, grid._a_prev, grid._w_prev, grid._w_int,
    ]))


@njit(cache=True)
def grid_eval(t, G):
    ts = G[0]
    k = 0
    for j in range(ts.shape[0] - 1, -1, -1):
        if t >= ts[j]:
            k = j
            break
    tau = t - ts[k]
    ramp = G[4, k]
    v0, v1 = G[5, k], G[1, k]
    a0, a1 = G[6, k], G[2, k]
    w0, w1 = G[7, k], G[3, k]
    if ramp > 0.0 and tau >= 0.0 and tau < ramp:
        frac = tau / ramp
        rate = 1.0 / ramp
    else:
        frac = 1.0
        rate = 0.0
    v = v0 + frac * (v1 - v0)
    a = a0 + frac * (a1 - a0)
    w = w0 + frac * (w1 - w0)
    dv = rate * (v1 - v0)
    tau_pos = max(tau, 0.0)
    if ramp > 0.0:
        tr = min(tau_pos, ramp)
        inner = w0 * tr + (w1 - w0) * tr * tr / (2.0 * ramp) + w1 * max(tau_pos - ramp, 0.0)
    else:
        inner = w1 * tau_pos
    inner = inner + min(tau, 0.0) * w1
    return v, a + G[8, k] + inner, w, dv


@njit(cache=True, inline="always")
def _inner(i_d, i_q, g_d, g_q, idr, iqr, w, P):
    v_d = P[KP_C] * (idr - i_d) + g_d + w * P[L_F] * i_q
    v_q = P[KP_C] * (iqr - i_q) + g_q - w * P[L_F] * i_d
    return v_d, v_q


@njit(cache=True, inline="always")
def _gfl_cmd(p_m, q_m, s_p, s_q, P):
    if P[CONVENTIONAL] > 0.5:
        idr = P[KP_P] * (P[P_REF] - p_m) + P[KI_P] * s_p
        iqr = -(P[KP_Q] * (P[Q_REF] - q_m) + P[KI_Q] * s_q)
    else:
        idr = P[KP_P] * (P[Q_REF] - q_m) + P[KI_P] * s_q
        iqr = P[KP_Q] * (P[P_REF] - p_m) + P[KI_Q] * s_p
    return idr, iqr


@njit(cache=True, inline="always")
def _gfl_loop(vd, vq, x, w, P):
    i_d, i_q = x[2], x[3]
    p = vd * i_d + vq * i_q
    q = vq * i_d - vd * i_q
    idr, iqr = _gfl_cmd(p, q, x[6], x[7], P)
    return _inner(i_d, i_q, x[0], x[1], idr, iqr, w, P)


@njit(cache=True, inline="always")
def _gfm_loop(vd, vq, x, P, filtered):
    i_d, i_q = x[2], x[3]
    if filtered:
        p_m, q_m = x[7], x[8]
    else:
        p_m = vd * i_d + vq * i_q
        q_m = vq * i_d - vd * i_q
    w = P[OMEGA_0] - P[M_P] * (p_m - P[P_0])
    v_ref = P[V_0] - P[N_Q] * (q_m - P[Q_0])
    idr = P[KP_V] * (v_ref - vd) + x[5]
    iqr = P[KP_V] * (0.0 - vq) + x[6]
    return _inner(i_d, i_q, x[0], x[1], idr, iqr, w, P)


@njit(cache=True, inline="always")
def _solve2(b_d, b_q, c_d, c_q, e_d, e_q):
    m11 = 1.0 - (c_d - b_d)
    m21 = -(c_q - b_q)
    m12 = -(e_d - b_d)
    m22 = 1.0 - (e_q - b_q)
    det = m11 * m22 - m12 * m21
    return (m22 * b_d - m12 * b_q) / det, (m11 * b_q - m21 * b_d) / det


@njit(cache=True)
def gfl_rhs(x, t, P, G, dx, alg):
    V, thg, wg, dv = grid_eval(t, G)
    delta = thg - x[5]
    vgd = V * math.cos(delta)
    vgq = V * math.sin(delta)
    w = P[OMEGA_0] + P[KP_PLL] * vgq + x[4]
    filtered = P[FILTERED] > 0.5
    if filtered:
        idr, iqr = _gfl_cmd(x[8], x[9], x[6], x[7], P)
        vd, vq = _inner(x[2], x[3], x[0], x[1], idr, iqr, w, P)
    else:
        b_d, b_q = _gfl_loop(0.0, 0.0, x, w, P)
        c_d, c_q = _gfl_loop(1.0, 0.0, x, w, P)
        e_d, e_q = _gfl_loop(0.0, 1.0, x, w, P)
        vd, vq = _solve2(b_d, b_q, c_d, c_q, e_d, e_q)
    i_d, i_q = x[2], x[3]
    p = vd * i_d + vq * i_q
    q = vq * i_d - vd * i_q
    if filtered:
        p_m, q_m = x[8], x[9]
    else:
        p_m, q_m = p, q
    idr, iqr = _gfl_cmd(p_m, q_m, x[6], x[7], P)
    vd, vq = _inner(i_d, i_q, x[0], x[1], idr, iqr, w, P)
    r, l = P[R_LINE], P[L_LINE]
    scale = P[OMEGA_B] / l
    dx[0] = P[KI_C] * (idr - i_d)
    dx[1] = P[KI_C] * (iqr - i_q)
    dx[2] = scale * (vd - vgd - r * i_d + w * l * i_q)
    dx[3] = scale * (vq - vgq - r * i_q - w * l * i_d)
    dx[4] = P[KI_PLL] * vgq
    dx[5] = w
    dx[6] = P[P_REF] - p_m
    dx[7] = P[Q_REF] - q_m
    if filtered:
        dx[8] = P[OMEGA_F] * (p - p_m)
        dx[9] = P[OMEGA_F] * (q - q_m)
    alg[A_VD], alg[A_VQ], alg[A_IDR], alg[A_IQR] = vd, vq, idr, iqr
    alg[A_P], alg[A_Q], alg[A_PM], alg[A_QM] = p, q, p_m, q_m
    alg[A_OMEGA], alg[A_VREF], alg[A_VGD], alg[A_VGQ] = w, math.nan, vgd, vgq


@njit(cache=True)
def gfm_rhs(x, t, P, G, dx, alg):
    V, thg, wg, dv = grid_eval(t, G)
    delta = thg - x[4]
    vgd = V * math.cos(delta)
    vgq = V * math.sin(delta)
    filtered = P[FILTERED] > 0.5
    b_d, b_q = _gfm_loop(0.0, 0.0, x, P, filtered)
    c_d, c_q = _gfm_loop(1.0, 0.0, x, P, filtered)
    e_d, e_q = _gfm_loop(0.0, 1.0, x, P, filtered)
    vd, vq = _solve2(b_d, b_q, c_d, c_q, e_d, e_q)
    i_d, i_q = x[2], x[3]
    p = vd * i_d + vq * i_q
    q = vq * i_d - vd * i_q
    if filtered:
        p_m, q_m = x[7], x[8]
    else:
        p_m, q_m = p, q
    w = P[OMEGA_0] - P[M_P] * (p_m - P[P_0])
    v_ref = P[V_0] - P[N_Q] * (q_m - P[Q_0])
    idr = P[KP_V] * (v_ref - vd) + x[5]
    iqr = P[KP_V] * (0.0 - vq) + x[6]
    vd, vq = _inner(i_d, i_q, x[0], x[1], idr, iqr, w, P)
    r, l = P[R_LINE], P[L_LINE]
    scale = P[OMEGA_B] / l
    dx[0] = P[KI_C] * (idr - i_d)
    dx[1] = P[KI_C] * (iqr - i_q)
    dx[2] = scale * (vd - vgd - r * i_d + w * l * i_q)
    dx[3] = scale * (vq - vgq - r * i_q - w * l * i_d)
    dx[4] = w
    dx[5] = P[KI_V] * (v_ref - vd)
    dx[6] = -P[KI_V] * vq
    if filtered:
        dx[7] = P[OMEGA_F] * (p - p_m)
        dx[8] = P[OMEGA_F] * (q - q_m)
    alg[A_VD], alg[A_VQ], alg[A_IDR], alg[A_IQR] = vd, vq, idr, iqr
    alg[A_P], alg[A_Q], alg[A_PM], alg[A_QM] = p, q, p_m, q_m
    alg[A_OMEGA], alg[A_VREF], alg[A_VGD], alg[A_VGQ] = w, v_ref, vgd, vgq


@njit(cache=True)
def _logistic(v, P):
    z = P[K_GAIN] * (v - P[V_SWITCH])
    z = min(max(z, -500.0), 500.0)
    return 1.0 / (1.0 + math.exp(-z))


@njit(cache=True)
def _embed(x, P, y):
    y[0], y[1], y[2], y[3] = x[0], x[1], x[2], x[3]
    y[4] = x[5]
    if P[CONVENTIONAL] > 0.5:
        y[5] = P[KI_P] * x[6]
        y[6] = -P[KI_Q] * x[7]
    else:
        y[5] = P[KI_P] * x[7]
        y[6] = P[KI_Q] * x[6]
    if P[FILTERED] > 0.5:
        y[7], y[8] = x[8], x[9]


@njit(cache=True)
def cont_rhs(x, t, P, G, dx, alg):
    n = x.shape[0]
    V, thg, wg, dv = grid_eval(t, G)
    s = _logistic(V, P)
    f1 = np.empty(n)
    a1 = np.empty(N_ALG)
    gfl_rhs(x, t, P, G, f1, a1)
    y = np.empty(n - 1)
    _embed(x, P, y)
    f2 = np.empty(n - 1)
    a2 = np.empty(N_ALG)
    gfm_rhs(y, t, P, G, f2, a2)
    for k in range(4):
        dx[k] = s * f1[k] + (1.0 - s) * f2[k]
    dx[4] = s * f1[4]
    dx[5] = s * f1[5] + (1.0 - s) * f2[4]
    if P[CONVENTIONAL] > 0.5:
        dx[6] = s * f1[6] + (1.0 - s) * f2[5] / P[KI_P]
        dx[7] = s * f1[7] - (1.0 - s) * f2[6] / P[KI_Q]
    else:
        dx[7] = s * f1[7] + (1.0 - s) * f2[5] / P[KI_P]
        dx[6] = s * f1[6] + (1.0 - s) * f2[6] / P[KI_Q]
    if P[FILTERED] > 0.5:
        dx[8] = s * f1[8] + (1.0 - s) * f2[7]
        dx[9] = s * f1[9] + (1.0 - s) * f2[8]
    for k in range(N_ALG):
        alg[k] = s * a1[k] + (1.0 - s) * a2[k]
    alg[A_VREF] = a2[A_VREF]


@njit(cache=True)
def rhs(kind, x, t, P, G, dx, alg):
    if kind == KIND_GFL:
        gfl_rhs(x, t, P, G, dx, alg)
    elif kind == KIND_GFM:
        gfm_rhs(x, t, P, G, dx, alg)
    else:
        cont_rhs(x, t, P, G, dx, alg)


@njit(cache=True)
def rk4_inplace(kind, x, t, dt, P, G, out):
    """One classical RK4 step; returns False when a stage is non-finite."""
    n = x.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    alg = np.empty(N_ALG)
    rhs(kind, x, t, P, G, k1, alg)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * dt * k1[i]
    rhs(kind, tmp, t + 0.5 * dt, P, G, k2, alg)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * dt * k2[i]
    rhs(kind, tmp, t + 0.5 * dt, P, G, k3, alg)
    for i in range(n):
        tmp[i] = x[i] + dt * k3[i]
    rhs(kind, tmp, t + dt, P, G, k4, alg)
    ok = True
    for i in range(n):
        out[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        if not math.isfinite(out[i]):
            ok = False
    return ok


@njit(cache=True)
def rk4_rows(kind, X, ts, dts, Ps, G):
    """One RK4 step per row with per-row start times, step lengths and parameters."""
    m, n = X.shape
    out = np.empty((m, n))
    ok = True
    for j in range(m):
        if not rk4_inplace(kind, X[j], ts[j], dts[j], Ps[j], G, out[j]):
            ok = False
    return out, ok


@njit(cache=True)
def integrate_batch(kind, X, t0, first_dt, dt, nsteps, last_dt, P, G):
    """Flow every row from ``t0``: a ``first_dt`` step, ``nsteps`` steps of ``dt``, a ``last_dt`` step.

    Zero-length first/last steps are skipped.
    """
    m, n = X.shape
    out = X.copy()
    buf = np.empty(n)
    ok = True
    for j in range(m):
        x = out[j]
        t = t0
        if first_dt > 0.0:
            if not rk4_inplace(kind, x, t, first_dt, P, G, buf):
                ok = False
            x[:] = buf
            t = t0 + first_dt
        t1 = t
        for s in range(nsteps):
            if not rk4_inplace(kind, x, t, dt, P, G, buf):
                ok = False
            x[:] = buf
            t = t1 + (s + 1) * dt
        if last_dt > 0.0:
            if not rk4_inplace(kind, x, t, last_dt, P, G, buf):
                ok = False
            x[:] = buf
    return out, ok


@njit(cache=True)
def omega_of(kind, x, t, P, G):
    n = x.shape[0]
    dx = np.empty(n)
    alg = np.empty(N_ALG)
    rhs(kind, x, t, P, G, dx, alg)
    return alg[A_OMEGA]


@njit(cache=True)
def gfl_guard(x, t, P, G):
    V, thg, wg, dv = grid_eval(t, G)
    vgq = V * math.sin(thg - x[5])
    w = P[OMEGA_0] + P[KP_PLL] * vgq + x[4]
    g_v = max(P[V_LO] - V, V - P[V_HI])
    g_w = abs(w - P[OMEGA_0]) - P[OMEGA_TH]
    return max(g_v, g_w)


@njit(cache=True)
def gfm_conditions(x, t, P, G):
    V, thg, wg, dv = grid_eval(t, G)
    w = omega_of(KIND_GFM, x, t, P, G)
    g_v = max(P[V_LO] - V, V - P[V_HI])
    g_w = abs(w - wg) - P[OMEGA_TH]
    return max(g_v, g_w)


@njit(cache=True)
def run_flow(kind, x0, t0, dt, nsteps, P, G, noise, rec, dwell0, check_guards, use_noise, record):
    """Fixed-step flow with guard monitoring.

    Steps are committed (into ``rec`` when ``record``; ``nsteps + 1`` rows with
    ``rec[0] = x0``) until a guard event, a dwell-window entry or a failure
    stops the run; with ``use_noise`` the pre-scaled ``noise[s]`` is added after
    step ``s``.  Returns ``(steps_done, status, dwell, x_last)``.  On ``STATUS_EVENT`` or
    ``STATUS_ENTRY`` the offending step is *not* committed.
    """
    n = x0.shape[0]
    x = x0.copy()
    buf = np.empty(n)
    if record:
        rec[0, :n] = x
    dwell = dwell0
    if check_guards and kind == KIND_GFL and gfl_guard(x, t0, P, G) >= 0.0:
        return 0, STATUS_EVENT, dwell, x
    ok_pre = False
    if check_guards and kind == KIND_GFM:
        ok_pre = gfm_conditions(x, t0, P, G) < 0.0
    for s in range(nsteps):
        t = t0 + s * dt
        t_post = t0 + (s + 1) * dt
        if not rk4_inplace(kind, x, t, dt, P, G, buf):
            return s, STATUS_FAIL, dwell, x
        if check_guards:
            if kind == KIND_GFL:
                if gfl_guard(buf, t_post, P, G) >= 0.0:
                    return s, STATUS_EVENT, dwell, x
            elif kind == KIND_GFM:
                ok_post = gfm_conditions(buf, t_post, P, G) < 0.0
                if ok_pre and ok_post:
                    if dwell + dt >= P[T_HOLD]:
                        return s, STATUS_EVENT, dwell, x
                    dwell = dwell + dt
                elif ok_post:
                    return s, STATUS_ENTRY, dwell, x
                else:
                    dwell = 0.0
                ok_pre = ok_post
        if use_noise:
            for i in range(n):
                x[i] = buf[i] + noise[s, i]
        else:
            x[:] = buf
        if record:
            rec[s + 1, :n] = x
    return nsteps, STATUS_DONE, dwell, x


@njit(cache=True)
def eval_outputs(kind, X, ts, P, G):
    """Algebraic outputs for each row ``X[j]`` at time ``ts[j]``."""
    m, n = X.shape
    out = np.empty((m, N_ALG))
    dx = np.empty(n)
    for j in range(m):
        rhs(kind, X[j], ts[j], P, G, dx, out[j])
    return out


@njit(cache=True)
def eval_fields(kind, X, ts, P, G):
    m, n = X.shape
    out = np.empty((m, n))
    alg = np.empty(N_ALG)
    for j in range(m):
        rhs(kind, X[j], ts[j], P, G, out[j], alg)
    return out
