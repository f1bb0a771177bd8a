"""Two-mode hybrid automaton: guards, dwell logic and reset maps.

Resets come in two flavours: the bumpless maps that transfer angle, frequency
and droop references across a switch, and the ``no_reset_map`` ablation that
copies the shared states and zeros everything mode specific.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .dynamics import eval_gfl, eval_gfm, eval_mode
from .grid import GridSample, grid_in_frame
from .params import InverterParams
from .states import (
    ETA_PLL, GAMMA_D, GAMMA_Q, I_D, I_Q, SIGMA_P, SIGMA_Q, THETA, THETA_PLL, XI_D, XI_Q, Mode,
    angle_index, state_dim,
)

VOLTAGE = "voltage"
FREQUENCY = "frequency"
DWELL = "dwell"


@dataclass
class HybridState:
    """Discrete mode, continuous state and the mode's current parameter set."""

    mode: Mode
    x: np.ndarray
    params: InverterParams
    dwell_clock: float = 0.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.x.shape != (state_dim(self.mode, self.params),):
            raise ValueError(f"{self.mode.value} state must have shape ({state_dim(self.mode, self.params)},)")
        if self.dwell_clock < 0.0:
            raise ValueError("dwell_clock must be non-negative")

    def copy(self) -> HybridState:
        return HybridState(self.mode, self.x.copy(), self.params, self.dwell_clock)


@dataclass
class SwitchRecord:
    """Quantities sampled just before a switch and the values the reset produced."""

    t_s: float
    from_mode: Mode
    to_mode: Mode
    guard: str
    theta_minus: float
    omega_minus: float
    p_s: float
    q_s: float
    v_grid_minus: float
    i_s: float
    p_0_plus: float
    q_0_plus: float
    psi: float
    r_plus: float
    l_plus: float
    theta_plus: float = math.nan
    omega_plus: float = math.nan
    v_ref_plus: float = math.nan
    guard_residual: float = math.nan
    reset_map: bool = True
    extra: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        row = asdict(self)
        row.pop("extra")
        row["from_mode"] = self.from_mode.value
        row["to_mode"] = self.to_mode.value
        return row


class GuardValue(NamedTuple):
    residual: float | np.ndarray
    sub_guard: str


def voltage_violation(v_mag, params: InverterParams):
    """Signed distance of ``|v_grid|`` outside the admissible band (>= 0 is outside)."""
    return np.maximum(params.v_th_lo - v_mag, v_mag - params.v_th_hi)


def frequency_violation(delta_omega, params: InverterParams):
    return np.abs(delta_omega) - params.omega_th


def _pick_sub_guard(g_v, g_w):
    # voltage wins ties and simultaneous firing
    if np.ndim(g_v) == 0:
        return VOLTAGE if (g_v >= 0.0 or g_v >= g_w) else FREQUENCY
    return np.where((g_v >= 0.0) | (g_v >= g_w), VOLTAGE, FREQUENCY)


def guard_gfl_to_gfm(x, grid: GridSample, params: InverterParams) -> GuardValue:
    """Signed GFL->GFM guard residual; a crossing to >= 0 triggers the switch.

    The frequency deviation is the PLL frequency relative to ``omega_0``.
    """
    x = np.asarray(x, dtype=float)
    _, v_gq = grid_in_frame(grid.v_mag, grid.theta, x[THETA_PLL])
    omega = params.omega_0 + params.k_p_pll * v_gq + x[ETA_PLL]
    g_v = voltage_violation(grid.v_mag, params)
    g_w = frequency_violation(omega - params.omega_0, params)
    g_v = g_v + 0.0 * g_w
    return GuardValue(np.maximum(g_v, g_w), _pick_sub_guard(g_v, g_w))


def gfm_conditions_residual(x, grid: GridSample, params: InverterParams):
    """Negative while the grid is back in band and the GFM frequency is within tolerance."""
    _, out = eval_gfm(x, grid, params)
    g_v = voltage_violation(grid.v_mag, params)
    g_w = frequency_violation(out.omega - grid.omega, params)
    return np.maximum(g_v, g_w)


def guard_gfm_to_gfl(x, grid: GridSample, params: InverterParams, dwell_clock) -> GuardValue:
    """Dwell guard: ``dwell_clock - T_hold`` while conditions hold, ``-T_hold`` otherwise."""
    ok = gfm_conditions_residual(x, grid, params) < 0.0
    residual = np.where(ok, np.asarray(dwell_clock, dtype=float) - params.T_hold, -params.T_hold)
    if np.ndim(residual) == 0:
        residual = float(residual)
    return GuardValue(residual, DWELL)


def guard(mode: Mode, x, grid: GridSample, params: InverterParams, dwell_clock=0.0) -> GuardValue:
    if mode is Mode.GFL:
        return guard_gfl_to_gfm(x, grid, params)
    return guard_gfm_to_gfl(x, grid, params, dwell_clock)


def virtual_impedance_activation(i_s, params: InverterParams):
    """Linear activation between ``i_th`` (0) and ``i_max`` (1).

    Written about the ramp midpoint so the end points and the midpoint come
    out exact in floating point.
    """
    mid = 0.5 * (params.i_th + params.i_max)
    ramp = 0.5 + (np.asarray(i_s, dtype=float) - mid) / (params.i_max - params.i_th)
    psi = np.clip(ramp, 0.0, 1.0)
    return float(psi) if psi.ndim == 0 else psi


def _gfl_to_gfm_core(x, grid: GridSample, params: InverterParams, reset_map: bool = True):
    """Batched GFL->GFM reset; returns the post state and the sampled quantities."""
    x = np.asarray(x, dtype=float)
    _, out = eval_gfl(x, grid, params)
    theta_m = x[THETA_PLL]
    omega_m = out.omega
    p_s, q_s = out.p, out.q
    v_m = grid.v_mag + 0.0 * p_s
    i_s = np.hypot(x[I_D], x[I_Q])
    psi = virtual_impedance_activation(i_s, params)
    shared = [x[GAMMA_D], x[GAMMA_Q], x[I_D], x[I_Q]]
    extras = []
    if reset_map:
        p_0 = p_s - (params.omega_0 - omega_m) / params.m_p
        q_0 = q_s - (params.v_0 - v_m) / params.n_q
        r_plus = params.r_f + params.r_g + psi * params.r_vi
        l_plus = params.l_f + params.l_g + psi * params.l_vi
        v_ref = params.v_0 - params.n_q * (q_s - q_0)
        # keep the current command continuous across the switch
        xi_d = out.i_d_ref - params.k_p_v * (v_ref - out.v_d)
        xi_q = out.i_q_ref + params.k_p_v * out.v_q
        x_new = shared + [theta_m, xi_d, xi_q]
        if params.filtered:
            extras = [p_s, q_s]
    else:
        p_0 = params.p_0 + 0.0 * p_s
        q_0 = params.q_0 + 0.0 * p_s
        r_plus = params.r_line + 0.0 * p_s
        l_plus = params.l_line + 0.0 * p_s
        zero = 0.0 * p_s
        x_new = shared + [zero, zero, zero]
        if params.filtered:
            extras = [x[8], x[9]]
    x_plus = np.stack(np.broadcast_arrays(*(x_new + extras)))
    sampled = dict(theta_minus=theta_m, omega_minus=omega_m, p_s=p_s, q_s=q_s, v_grid_minus=v_m,
                   i_s=i_s, p_0_plus=p_0, q_0_plus=q_0, psi=psi, r_plus=r_plus, l_plus=l_plus)
    return x_plus, sampled


def _gfm_to_gfl_core(x, grid: GridSample, params: InverterParams, reset_map: bool = True):
    """Batched GFM->GFL reset."""
    x = np.asarray(x, dtype=float)
    _, out = eval_gfm(x, grid, params)
    theta_m = x[THETA]
    omega_m = out.omega
    nominal = params.nominal()
    shared = [x[GAMMA_D], x[GAMMA_Q], x[I_D], x[I_Q]]
    if reset_map:
        _, v_gq = grid_in_frame(grid.v_mag, grid.theta, theta_m)
        eta = omega_m - params.omega_0 - params.k_p_pll * v_gq
        # outer-loop integrators chosen so the GFL current commands equal the GFM ones
        p_m, q_m = out.p_m, out.q_m
        if params.conventional_pairing:
            sigma_p = (out.i_d_ref - params.k_p_p * (params.p_ref - p_m)) / params.k_i_p
            sigma_q = (-out.i_q_ref - params.k_p_q * (params.q_ref - q_m)) / params.k_i_q
        else:
            sigma_q = (out.i_d_ref - params.k_p_p * (params.q_ref - q_m)) / params.k_i_p
            sigma_p = (out.i_q_ref - params.k_p_q * (params.p_ref - p_m)) / params.k_i_q
        x_new = shared + [eta, theta_m, sigma_p, sigma_q]
    else:
        zero = 0.0 * omega_m
        x_new = shared + [zero, zero, zero, zero]
    if params.filtered:
        x_new += [x[7], x[8]]
    x_plus = np.stack(np.broadcast_arrays(*x_new))
    i_s = np.hypot(x[I_D], x[I_Q])
    sampled = dict(theta_minus=theta_m, omega_minus=omega_m, p_s=out.p, q_s=out.q,
                   v_grid_minus=grid.v_mag + 0.0 * omega_m, i_s=i_s,
                   p_0_plus=params.p_0 + 0.0 * omega_m, q_0_plus=params.q_0 + 0.0 * omega_m,
                   psi=0.0 * omega_m, r_plus=nominal.r_line + 0.0 * omega_m,
                   l_plus=nominal.l_line + 0.0 * omega_m)
    return x_plus, sampled


def post_params(from_mode: Mode, sampled: dict, params: InverterParams, reset_map: bool = True) -> InverterParams:
    """Parameter set that governs the flow after a switch."""
    if from_mode is Mode.GFM:
        return params.nominal()
    if not reset_map:
        return params
    return params.replace(p_0=float(sampled["p_0_plus"]), q_0=float(sampled["q_0_plus"]),
                          r_eff=float(sampled["r_plus"]), l_eff=float(sampled["l_plus"]))


def reset_state(from_mode: Mode, x, grid: GridSample, params: InverterParams, reset_map: bool = True):
    """Post-switch continuous state only (batched); used for reset Jacobians."""
    core = _gfl_to_gfm_core if from_mode is Mode.GFL else _gfm_to_gfl_core
    return core(x, grid, params, reset_map)[0]


def apply_reset(from_mode: Mode, x, grid: GridSample, params: InverterParams, t_s: float,
                sub_guard: str, reset_map: bool = True, guard_residual: float = math.nan):
    """Apply the reset for a switch out of ``from_mode`` at ``t_s``.

    Returns ``(x_plus, params_plus, record)``; the record also stores the
    post-switch angle, frequency and voltage reference for continuity checks.
    """
    x = np.asarray(x, dtype=float)
    core = _gfl_to_gfm_core if from_mode is Mode.GFL else _gfm_to_gfl_core
    x_plus, sampled = core(x, grid, params, reset_map)
    params_plus = post_params(from_mode, sampled, params, reset_map)
    to_mode = from_mode.other
    _, out_plus = eval_mode(to_mode, x_plus, grid, params_plus)
    record = SwitchRecord(
        t_s=float(t_s), from_mode=from_mode, to_mode=to_mode, guard=str(sub_guard),
        **{k: float(v) for k, v in sampled.items()},
        theta_plus=float(x_plus[angle_index(to_mode)]), omega_plus=float(out_plus.omega),
        v_ref_plus=float(out_plus.v_ref) if out_plus.v_ref is not None else math.nan,
        guard_residual=float(guard_residual), reset_map=reset_map,
    )
    return x_plus, params_plus, record


def reset_gfl_to_gfm(x, grid: GridSample, params: InverterParams, t_s: float = 0.0,
                     sub_guard: str = VOLTAGE, reset_map: bool = True):
    return apply_reset(Mode.GFL, x, grid, params, t_s, sub_guard, reset_map)


def reset_gfm_to_gfl(x, grid: GridSample, params: InverterParams, t_s: float = 0.0,
                     reset_map: bool = True):
    return apply_reset(Mode.GFM, x, grid, params, t_s, DWELL, reset_map)
