"""Independent symbolic re-derivations of the mode vector fields (test oracles).

Written from the model equations directly with sympy.  The algebraic voltage
loop is linear in (v_d, v_q); sympy extracts that linear system and numpy
solves it at each point, so no closed form with removable singularities is
needed.
"""

from functools import lru_cache

import numpy as np
import sympy as sp

GD, GQ, ID, IQ = sp.symbols("gamma_d gamma_q i_d i_q", real=True)
ETA, TH_PLL, SIG_P, SIG_Q = sp.symbols("eta theta_pll sigma_p sigma_q", real=True)
TH, XI_D, XI_Q = sp.symbols("theta xi_d xi_q", real=True)
V, TH_G = sp.symbols("V theta_g", real=True)
VD, VQ = sp.symbols("v_d v_q", real=True)


def _common(p, omega, i_d_ref, i_q_ref, v_gd, v_gq):
    l, r = p.l_line, p.r_line
    v_d = p.k_p_c * (i_d_ref - ID) + GD + omega * p.l_f * IQ
    v_q = p.k_p_c * (i_q_ref - IQ) + GQ - omega * p.l_f * ID
    d_id = p.omega_b / l * (v_d - v_gd - r * ID + omega * l * IQ)
    d_iq = p.omega_b / l * (v_q - v_gq - r * IQ - omega * l * ID)
    return v_d, v_q, [p.k_i_c * (i_d_ref - ID), p.k_i_c * (i_q_ref - IQ), d_id, d_iq]


def _compile(args, v_d, v_q, rows, outs):
    A, b = sp.linear_eq_to_matrix([VD - v_d, VQ - v_q], [VD, VQ])
    fa = sp.lambdify(args, A, "numpy")
    fb = sp.lambdify(args, b, "numpy")
    fr = sp.lambdify((*args, VD, VQ), rows, "numpy")
    fo = sp.lambdify((*args, VD, VQ), outs, "numpy")

    def voltages(*a):
        return np.linalg.solve(np.array(fa(*a), dtype=float), np.array(fb(*a), dtype=float).ravel())

    def field(*a):
        return fr(*a, *voltages(*a))

    def outputs(*a):
        return fo(*a, *voltages(*a))
    return field, outputs


@lru_cache(maxsize=8)
def gfl_oracle(p):
    v_gd = V * sp.cos(TH_G - TH_PLL)
    v_gq = V * sp.sin(TH_G - TH_PLL)
    omega = p.omega_0 + p.k_p_pll * v_gq + ETA
    pw = VD * ID + VQ * IQ
    qw = VQ * ID - VD * IQ
    i_d_ref = p.k_p_p * (p.q_ref - qw) + p.k_i_p * SIG_Q
    i_q_ref = p.k_p_q * (p.p_ref - pw) + p.k_i_q * SIG_P
    v_d, v_q, rows = _common(p, omega, i_d_ref, i_q_ref, v_gd, v_gq)
    rows = rows + [p.k_i_pll * v_gq, omega, p.p_ref - pw, p.q_ref - qw]
    outs = [VD, VQ, omega, pw, qw]
    return _compile((GD, GQ, ID, IQ, ETA, TH_PLL, SIG_P, SIG_Q, V, TH_G), v_d, v_q, rows, outs)


@lru_cache(maxsize=8)
def gfm_oracle(p):
    v_gd = V * sp.cos(TH_G - TH)
    v_gq = V * sp.sin(TH_G - TH)
    pw = VD * ID + VQ * IQ
    qw = VQ * ID - VD * IQ
    omega = p.omega_0 - p.m_p * (pw - p.p_0)
    v_ref = p.v_0 - p.n_q * (qw - p.q_0)
    i_d_ref = p.k_p_v * (v_ref - VD) + XI_D
    i_q_ref = -p.k_p_v * VQ + XI_Q
    v_d, v_q, rows = _common(p, omega, i_d_ref, i_q_ref, v_gd, v_gq)
    rows = rows + [omega, p.k_i_v * (v_ref - VD), -p.k_i_v * VQ]
    outs = [VD, VQ, omega, pw, qw, v_ref]
    return _compile((GD, GQ, ID, IQ, TH, XI_D, XI_Q, V, TH_G), v_d, v_q, rows, outs)


def gfl_field(x, v_mag, theta_g, p):
    f, _ = gfl_oracle(p)
    return np.array(f(*x, v_mag, theta_g), dtype=float)


def gfm_field(x, v_mag, theta_g, p):
    f, _ = gfm_oracle(p)
    return np.array(f(*x, v_mag, theta_g), dtype=float)


def gfl_outputs(x, v_mag, theta_g, p):
    _, g = gfl_oracle(p)
    return np.array(g(*x, v_mag, theta_g), dtype=float)


def gfm_outputs(x, v_mag, theta_g, p):
    _, g = gfm_oracle(p)
    return np.array(g(*x, v_mag, theta_g), dtype=float)
