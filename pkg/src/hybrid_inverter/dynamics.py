"""Continuous vector fields of the GFL and GFM control modes.

Every function accepts a state of shape ``(n,)`` or a batch of states of
shape ``(n, m)``; grid quantities broadcast against the trailing axis.  The
batch axis is what makes finite-difference Jacobians and Monte-Carlo
ensembles cheap.

The inner-loop voltage feeds the instantaneous powers, which feed back into
the outer loops.  That algebraic loop is affine in ``(v_d, v_q)`` and is solved
exactly per evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import NumericalDomainError
from .grid import GridSample, grid_in_frame
from .params import InverterParams
from .states import (
    ETA_PLL, GAMMA_D, GAMMA_Q, I_D, I_Q, SIGMA_P, SIGMA_Q, THETA, THETA_PLL, XI_D, XI_Q, Mode,
)

LOGISTIC_CLAMP = 500.0


@dataclass
class AlgebraicOutputs:
    """Algebraic signals of one field evaluation (arrays follow the batch shape)."""

    v_d: np.ndarray
    v_q: np.ndarray
    i_d_ref: np.ndarray
    i_q_ref: np.ndarray
    p: np.ndarray
    q: np.ndarray
    p_m: np.ndarray
    q_m: np.ndarray
    omega: np.ndarray
    v_ref: np.ndarray | None = None
    v_grid_d: np.ndarray | None = None
    v_grid_q: np.ndarray | None = None

    # ideal averaged modulation: the filter-side voltage is the inner-loop output
    @property
    def v_d_filt(self):
        return self.v_d

    @property
    def v_q_filt(self):
        return self.v_q


class CommonTerms(NamedTuple):
    d_gamma_d: np.ndarray
    d_gamma_q: np.ndarray
    d_i_d: np.ndarray
    d_i_q: np.ndarray
    v_d: np.ndarray
    v_q: np.ndarray


def _require_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalDomainError("non-finite input to vector field")


def inner_loop_voltage(i_d, i_q, gamma_d, gamma_q, i_d_ref, i_q_ref, omega, params: InverterParams):
    """Commanded voltage of the current PI loop with cross-coupling terms."""
    v_d = params.k_p_c * (i_d_ref - i_d) + gamma_d + omega * params.l_f * i_q
    v_q = params.k_p_c * (i_q_ref - i_q) + gamma_q - omega * params.l_f * i_d
    return v_d, v_q


def eval_common(i_d, i_q, gamma_d, gamma_q, i_d_ref, i_q_ref, omega, v_grid_d, v_grid_q,
                params: InverterParams) -> CommonTerms:
    """Inner current loop and filter current rows shared by both modes."""
    _require_finite(i_d, i_q, gamma_d, gamma_q, i_d_ref, i_q_ref, omega, v_grid_d, v_grid_q)
    r, l = params.r_line, params.l_line
    v_d, v_q = inner_loop_voltage(i_d, i_q, gamma_d, gamma_q, i_d_ref, i_q_ref, omega, params)
    scale = params.omega_b / l
    d_i_d = scale * (v_d - v_grid_d - r * i_d + omega * l * i_q)
    d_i_q = scale * (v_q - v_grid_q - r * i_q - omega * l * i_d)
    return CommonTerms(
        params.k_i_c * (i_d_ref - i_d), params.k_i_c * (i_q_ref - i_q), d_i_d, d_i_q, v_d, v_q,
    )


def solve_affine_fixed_point(cmd: Callable):
    """Solve ``v = cmd(v)`` for an affine map of ``R^2`` (batched).

    ``cmd(v_d, v_q)`` returns the pair it maps to.  Three evaluations recover
    the map exactly; the 2x2 system is then solved in closed form.
    """
    b_d, b_q = cmd(0.0, 0.0)
    c_d, c_q = cmd(1.0, 0.0)
    e_d, e_q = cmd(0.0, 1.0)
    m11 = 1.0 - (c_d - b_d)
    m21 = -(c_q - b_q)
    m12 = -(e_d - b_d)
    m22 = 1.0 - (e_q - b_q)
    det = m11 * m22 - m12 * m21
    if np.any(np.abs(det) < 1e-12):
        raise NumericalDomainError("algebraic voltage loop is singular")
    v_d = (m22 * b_d - m12 * b_q) / det
    v_q = (m11 * b_q - m21 * b_d) / det
    return v_d, v_q


def powers(v_d, v_q, i_d, i_q):
    """Instantaneous active and reactive power in the dq frame."""
    return v_d * i_d + v_q * i_q, v_q * i_d - v_d * i_q


def gfl_current_command(p_m, q_m, sigma_p, sigma_q, params: InverterParams):
    if params.conventional_pairing:
        i_d_ref = params.k_p_p * (params.p_ref - p_m) + params.k_i_p * sigma_p
        i_q_ref = -(params.k_p_q * (params.q_ref - q_m) + params.k_i_q * sigma_q)
    else:
        i_d_ref = params.k_p_p * (params.q_ref - q_m) + params.k_i_p * sigma_q
        i_q_ref = params.k_p_q * (params.p_ref - p_m) + params.k_i_q * sigma_p
    return i_d_ref, i_q_ref


def pll_frequency(eta_pll, theta_pll, grid: GridSample, params: InverterParams):
    """PLL frequency and the q-axis grid voltage seen in the PLL frame."""
    _, v_q_pll = grid_in_frame(grid.v_mag, grid.theta, theta_pll)
    return params.omega_0 + params.k_p_pll * v_q_pll + eta_pll, v_q_pll


def eval_gfl(x, grid: GridSample, params: InverterParams):
    """GFL vector field: PLL, outer power loop and the common block."""
    x = np.asarray(x, dtype=float)
    _require_finite(x)
    gamma_d, gamma_q, i_d, i_q = x[GAMMA_D], x[GAMMA_Q], x[I_D], x[I_Q]
    eta, theta, sigma_p, sigma_q = x[ETA_PLL], x[THETA_PLL], x[SIGMA_P], x[SIGMA_Q]
    v_gd, v_gq = grid_in_frame(grid.v_mag, grid.theta, theta)
    omega = params.omega_0 + params.k_p_pll * v_gq + eta

    if params.filtered:
        p_m, q_m = x[8], x[9]

        def cmd(v_d, v_q):
            i_d_ref, i_q_ref = gfl_current_command(p_m, q_m, sigma_p, sigma_q, params)
            return inner_loop_voltage(i_d, i_q, gamma_d, gamma_q, i_d_ref, i_q_ref, omega, params)
    else:
        def cmd(v_d, v_q):
            p, q = powers(v_d, v_q, i_d, i_q)
            i_d_ref, i_q_ref = gfl_current_command(p, q, sigma_p, sigma_q, params)
            return inner_loop_voltage(i_d, i_q, gamma_d, gamma_q, i_d_ref, i_q_ref, omega, params)

    v_d, v_q = solve_affine_fixed_point(cmd)
    p, q = powers(v_d, v_q, i_d, i_q)
    if not params.filtered:
        p_m, q_m = p, q
    i_d_ref, i_q_ref = gfl_current_command(p_m, q_m, sigma_p, sigma_q, params)
    common = eval_common(i_d, i_q, gamma_d, gamma_q, i_d_ref, i_q_ref, omega, v_gd, v_gq, params)
    rows = [
        common.d_gamma_d, common.d_gamma_q, common.d_i_d, common.d_i_q,
        params.k_i_pll * v_gq,
        omega,
        params.p_ref - p_m + 0.0 * i_d,
        params.q_ref - q_m + 0.0 * i_d,
    ]
    if params.filtered:
        rows += [params.omega_f * (p - p_m), params.omega_f * (q - q_m)]
    out = AlgebraicOutputs(common.v_d, common.v_q, i_d_ref, i_q_ref, p, q, p_m, q_m, omega,
                           None, v_gd, v_gq)
    return np.stack(np.broadcast_arrays(*rows)), out


def droop(p_m, q_m, params: InverterParams):
    """Droop laws: frequency from active power and voltage reference from reactive."""
    omega = params.omega_0 - params.m_p * (p_m - params.p_0)
    v_ref = params.v_0 - params.n_q * (q_m - params.q_0)
    return omega, v_ref


def gfm_current_command(v_ref, v_d, v_q, xi_d, xi_q, params: InverterParams):
    return params.k_p_v * (v_ref - v_d) + xi_d, params.k_p_v * (0.0 - v_q) + xi_q


def eval_gfm(x, grid: GridSample, params: InverterParams):
    """GFM vector field: droop, voltage loop and the common block."""
    x = np.asarray(x, dtype=float)
    _require_finite(x)
    gamma_d, gamma_q, i_d, i_q = x[GAMMA_D], x[GAMMA_Q], x[I_D], x[I_Q]
    theta, xi_d, xi_q = x[THETA], x[XI_D], x[XI_Q]
    v_gd, v_gq = grid_in_frame(grid.v_mag, grid.theta, theta)

    if params.filtered:
        p_m, q_m = x[7], x[8]
        omega_f, v_ref_f = droop(p_m, q_m, params)

        def cmd(v_d, v_q):
            i_d_ref, i_q_ref = gfm_current_command(v_ref_f, v_d, v_q, xi_d, xi_q, params)
            return inner_loop_voltage(i_d, i_q, gamma_d, gamma_q, i_d_ref, i_q_ref, omega_f, params)
    else:
        def cmd(v_d, v_q):
            p, q = powers(v_d, v_q, i_d, i_q)
            omega, v_ref = droop(p, q, params)
            i_d_ref, i_q_ref = gfm_current_command(v_ref, v_d, v_q, xi_d, xi_q, params)
            return inner_loop_voltage(i_d, i_q, gamma_d, gamma_q, i_d_ref, i_q_ref, omega, params)

    v_d, v_q = solve_affine_fixed_point(cmd)
    p, q = powers(v_d, v_q, i_d, i_q)
    if not params.filtered:
        p_m, q_m = p, q
    omega, v_ref = droop(p_m, q_m, params)
    i_d_ref, i_q_ref = gfm_current_command(v_ref, v_d, v_q, xi_d, xi_q, params)
    common = eval_common(i_d, i_q, gamma_d, gamma_q, i_d_ref, i_q_ref, omega, v_gd, v_gq, params)
    rows = [
        common.d_gamma_d, common.d_gamma_q, common.d_i_d, common.d_i_q,
        omega,
        params.k_i_v * (v_ref - common.v_d),
        -params.k_i_v * common.v_q,
    ]
    if params.filtered:
        rows += [params.omega_f * (p - p_m), params.omega_f * (q - q_m)]
    out = AlgebraicOutputs(common.v_d, common.v_q, i_d_ref, i_q_ref, p, q, p_m, q_m, omega,
                           v_ref, v_gd, v_gq)
    return np.stack(np.broadcast_arrays(*rows)), out


def eval_mode(mode: Mode, x, grid: GridSample, params: InverterParams):
    return eval_gfl(x, grid, params) if mode is Mode.GFL else eval_gfm(x, grid, params)


def measure(mode: Mode, x, grid: GridSample, params: InverterParams):
    """Measurement vector ``[i_d, i_q, v_d, v_q]`` in the controller frame."""
    x = np.asarray(x, dtype=float)
    _, out = eval_mode(mode, x, grid, params)
    return np.stack(np.broadcast_arrays(x[I_D], x[I_Q], out.v_d, out.v_q))


def logistic(v, k_gain, v_switch):
    """Overflow-safe logistic weight ``1 / (1 + exp(-k (v - v_switch)))``."""
    z = np.clip(k_gain * (np.asarray(v, dtype=float) - v_switch), -LOGISTIC_CLAMP, LOGISTIC_CLAMP)
    return 1.0 / (1.0 + np.exp(-z))


def embed_gfl_as_gfm(x, params: InverterParams):
    """Map GFL coordinates onto GFM coordinates for the smoothed model.

    The droop angle takes the PLL angle and each voltage-loop integrator takes
    the outer-loop integrator that drives the same current command, scaled so
    the integral contributions to the command agree.
    """
    x = np.asarray(x, dtype=float)
    if params.conventional_pairing:
        xi_d, xi_q = params.k_i_p * x[SIGMA_P], -params.k_i_q * x[SIGMA_Q]
    else:
        xi_d, xi_q = params.k_i_p * x[SIGMA_Q], params.k_i_q * x[SIGMA_P]
    rows = [x[GAMMA_D], x[GAMMA_Q], x[I_D], x[I_Q], x[THETA_PLL], xi_d, xi_q]
    if params.filtered:
        rows += [x[8], x[9]]
    return np.stack(rows)


def pull_back_gfm_rates(dx_gfm, params: InverterParams):
    """Express a GFM derivative in GFL coordinates (PLL integrator frozen)."""
    dx = np.zeros((8 + 2 * params.filtered,) + np.shape(dx_gfm)[1:])
    dx[:4] = dx_gfm[:4]
    dx[ETA_PLL] = 0.0
    dx[THETA_PLL] = dx_gfm[THETA]
    if params.conventional_pairing:
        dx[SIGMA_P] = dx_gfm[XI_D] / params.k_i_p
        dx[SIGMA_Q] = -dx_gfm[XI_Q] / params.k_i_q
    else:
        dx[SIGMA_Q] = dx_gfm[XI_D] / params.k_i_p
        dx[SIGMA_P] = dx_gfm[XI_Q] / params.k_i_q
    if params.filtered:
        dx[8:10] = dx_gfm[7:9]
    return dx


def smoothed_field(x, grid: GridSample, params: InverterParams, k_gain: float,
                   v_switch: float | None = None, with_weight: bool = False):
    """Logistic blend of the GFL field and the GFM field on GFL coordinates."""
    if not k_gain > 0.0:
        raise NumericalDomainError("k_gain must be positive")
    v_switch = params.v_th_lo if v_switch is None else v_switch
    x = np.asarray(x, dtype=float)
    sigma = logistic(grid.v_mag, k_gain, v_switch)
    f_gfl, _ = eval_gfl(x, grid, params)
    f_gfm, _ = eval_gfm(embed_gfl_as_gfm(x, params), grid, params)
    f = sigma * f_gfl + (1.0 - sigma) * pull_back_gfm_rates(f_gfm, params)
    return (f, sigma) if with_weight else f


def smoothed_measure(x, grid: GridSample, params: InverterParams, k_gain: float,
                     v_switch: float | None = None):
    """Measurement model of the smoothed baseline: blended terminal voltage."""
    v_switch = params.v_th_lo if v_switch is None else v_switch
    x = np.asarray(x, dtype=float)
    sigma = logistic(grid.v_mag, k_gain, v_switch)
    z_gfl = measure(Mode.GFL, x, grid, params)
    z_gfm = measure(Mode.GFM, embed_gfl_as_gfm(x, params), grid, params)
    return sigma * z_gfl + (1.0 - sigma) * z_gfm
