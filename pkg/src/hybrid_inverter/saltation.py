"""Reset Jacobians, guard gradients and saltation matrices.

Guards here may depend on time through the scripted grid, so the
transversality term is ``alpha = grad_x(g) . f_pre + dg/dt`` and the reset's
own time dependence enters the rank-one correction:

    Xi = DR + (f_post - DR f_pre - dR/dt) grad_x(g)^T / alpha

For purely time-driven guards (voltage band, dwell timer) ``grad_x(g) = 0``
and the saltation matrix reduces to the reset Jacobian.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .dynamics import eval_mode
from .errors import GrazingTransitionError, NumericalDomainError, SingularGuardError
from .grid import GridSample, GridSignal, grid_in_frame
from .hybrid import DWELL, FREQUENCY, VOLTAGE, reset_state
from .params import InverterParams
from .states import (
    ETA_PLL, GAMMA_D, GAMMA_Q, I_D, I_Q, THETA, THETA_PLL, Mode, angle_index, state_dim,
)

ALPHA_MIN = 1e-8
W_R_DEFAULT = 1e-8
FD_STEP = 1e-6
TIME_STEP = 1e-7


class ResetJacobian(NamedTuple):
    DR: np.ndarray
    dR_dt: np.ndarray
    kink: bool


def _psi_region(i_s, params: InverterParams):
    return np.where(i_s < params.i_th, 0, np.where(i_s > params.i_max, 2, 1))


def reset_jacobian(from_mode: Mode, x, grid: GridSignal | GridSample, params: InverterParams,
                   t_s: float = 0.0, reset_map: bool = True, h: float = FD_STEP) -> ResetJacobian:
    """Finite-difference Jacobian of the reset out of ``from_mode`` at ``x``.

    Central differences are used except where a perturbation would move the
    current magnitude across a kink of the virtual-impedance activation; those
    columns fall back to the one-sided difference on the unperturbed side and
    the ``kink`` flag is set.  ``dR_dt`` differentiates the reset with respect
    to the switching time through the grid signal (zero for a fixed sample).
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    sample = grid.sample(t_s) if isinstance(grid, GridSignal) else grid
    eye = np.eye(n) * h
    X_plus = x[:, None] + eye
    X_minus = x[:, None] - eye
    R0 = reset_state(from_mode, x, sample, params, reset_map)
    Rp = reset_state(from_mode, X_plus, sample, params, reset_map)
    Rm = reset_state(from_mode, X_minus, sample, params, reset_map)
    DR = (Rp - Rm) / (2.0 * h)
    kink = False
    if from_mode is Mode.GFL and reset_map:
        region = _psi_region(np.hypot(x[I_D], x[I_Q]), params)
        reg_p = _psi_region(np.hypot(X_plus[I_D], X_plus[I_Q]), params)
        reg_m = _psi_region(np.hypot(X_minus[I_D], X_minus[I_Q]), params)
        for j in range(n):
            if reg_p[j] != region:
                DR[:, j] = (R0 - Rm[:, j]) / h
                kink = True
            elif reg_m[j] != region:
                DR[:, j] = (Rp[:, j] - R0) / h
                kink = True
    if isinstance(grid, GridSignal):
        Rt_p = reset_state(from_mode, x, grid.sample(t_s + TIME_STEP), params, reset_map)
        Rt_m = reset_state(from_mode, x, grid.sample(t_s - TIME_STEP), params, reset_map)
        dR_dt = (Rt_p - Rt_m) / (2.0 * TIME_STEP)
    else:
        dR_dt = np.zeros(R0.size)
    return ResetJacobian(DR, dR_dt, kink)


def reset_jacobian_analytic(from_mode: Mode, params: InverterParams, reset_map: bool = True) -> np.ndarray:
    """Closed-form rows of the reset Jacobian; rows that need the algebraic chain are NaN.

    The shared inner-loop and current rows are unit rows and the angle row
    maps the pre-switch angle one-to-one.  Under the ablation map the zeroed
    rows are exact zeros.
    """
    to_mode = from_mode.other
    n1 = state_dim(from_mode, params)
    n2 = state_dim(to_mode, params)
    J = np.full((n2, n1), np.nan)
    for k in (GAMMA_D, GAMMA_Q, I_D, I_Q):
        J[k] = 0.0
        J[k, k] = 1.0
    if not reset_map:
        J[4:7 if to_mode is Mode.GFM else 8] = 0.0
    else:
        J[angle_index(to_mode)] = 0.0
        J[angle_index(to_mode), angle_index(from_mode)] = 1.0
    if params.filtered and (from_mode is Mode.GFM or not reset_map):
        J[n2 - 2:] = 0.0
        J[n2 - 2, n1 - 2] = 1.0
        J[n2 - 1, n1 - 1] = 1.0
    return J


class GuardGradient(NamedTuple):
    """Gradient of the signed guard residual.

    ``state`` is the gradient with respect to the mode's state vector,
    ``dt`` the explicit time derivative, and ``voltage_block`` the unit vector
    ``(v_d, v_q) / |v|`` of the grid phasor for the voltage guard.
    """

    state: np.ndarray
    dt: float
    voltage_block: np.ndarray | None
    sub_guard: str


def guard_gradient(mode: Mode, x, sub_guard: str, grid: GridSignal, t: float,
                   params: InverterParams) -> GuardGradient:
    x = np.asarray(x, dtype=float)
    n = x.size
    s = grid.sample(t)
    if sub_guard == DWELL:
        return GuardGradient(np.zeros(n), 1.0, None, DWELL)
    if sub_guard == VOLTAGE:
        if not s.v_mag > 0.0:
            raise SingularGuardError("voltage guard gradient is undefined at zero grid voltage")
        v_gd, v_gq = grid_in_frame(s.v_mag, s.theta, x[angle_index(mode)])
        block = np.array([v_gd, v_gq]) / s.v_mag
        # lower band edge is active below v_0, upper edge above it
        sign = -1.0 if s.v_mag <= params.v_0 else 1.0
        return GuardGradient(np.zeros(n), sign * s.dv_dt, block, VOLTAGE)
    if sub_guard == FREQUENCY:
        if mode is not Mode.GFL:
            raise ValueError("the frequency sub-guard belongs to GFL mode")
        delta = s.theta - x[THETA_PLL]
        omega = params.omega_0 + params.k_p_pll * s.v_mag * math.sin(delta) + x[ETA_PLL]
        sgn = 1.0 if omega - params.omega_0 >= 0.0 else -1.0
        grad = np.zeros(n)
        grad[ETA_PLL] = sgn
        grad[THETA_PLL] = -sgn * params.k_p_pll * s.v_mag * math.cos(delta)
        dt = sgn * params.k_p_pll * (s.dv_dt * math.sin(delta) + s.v_mag * math.cos(delta) * s.omega)
        return GuardGradient(grad, dt, None, FREQUENCY)
    raise ValueError(f"unknown sub-guard {sub_guard!r}")


@dataclass
class SaltationInputs:
    f_pre: np.ndarray
    f_post: np.ndarray
    DR: np.ndarray
    grad_g: np.ndarray
    dg_dt: float = 0.0
    dR_dt: np.ndarray | None = None

    @property
    def alpha(self) -> float:
        return float(np.dot(self.grad_g, self.f_pre) + self.dg_dt)


@dataclass
class SaltationMatrix:
    Xi: np.ndarray
    alpha: float
    sub_guard: str = ""
    t_s: float = math.nan
    fallback: bool = False

    @property
    def shape(self):
        return self.Xi.shape


def saltation_matrix(inp: SaltationInputs, sub_guard: str = "", t_s: float = math.nan,
                     alpha_min: float = ALPHA_MIN) -> SaltationMatrix:
    DR = np.atleast_2d(np.asarray(inp.DR, dtype=float))
    f_pre = np.asarray(inp.f_pre, dtype=float)
    f_post = np.asarray(inp.f_post, dtype=float)
    grad = np.asarray(inp.grad_g, dtype=float)
    if DR.shape != (f_post.size, f_pre.size) or grad.size != f_pre.size:
        raise ValueError(f"inconsistent saltation dimensions: DR {DR.shape}, f_pre {f_pre.size}, "
                         f"f_post {f_post.size}, grad {grad.size}")
    alpha = inp.alpha
    if not abs(alpha) > alpha_min:
        raise GrazingTransitionError(alpha, alpha_min)
    jump = f_post - DR @ f_pre
    if inp.dR_dt is not None:
        jump = jump - np.asarray(inp.dR_dt, dtype=float)
    Xi = DR + np.outer(jump, grad) / alpha
    if not np.all(np.isfinite(Xi)):
        raise NumericalDomainError("non-finite saltation matrix")
    return SaltationMatrix(Xi, alpha, sub_guard, t_s)


def saltation_or_reset_jacobian(inp: SaltationInputs, sub_guard: str = "", t_s: float = math.nan,
                                alpha_min: float = ALPHA_MIN) -> SaltationMatrix:
    """Saltation matrix, degrading to ``Xi = DR`` with a warning at grazing contact."""
    try:
        return saltation_matrix(inp, sub_guard, t_s, alpha_min)
    except GrazingTransitionError as exc:
        warnings.warn(f"grazing transition ({exc}); using the reset Jacobian alone", RuntimeWarning,
                      stacklevel=2)
        return SaltationMatrix(np.asarray(inp.DR, dtype=float), inp.alpha, sub_guard, t_s, fallback=True)


def event_saltation(from_mode: Mode, x_minus, x_plus, t_s: float, sub_guard: str, grid: GridSignal,
                    params_minus: InverterParams, params_plus: InverterParams, reset_map: bool = True,
                    strict: bool = False) -> SaltationMatrix:
    """Saltation matrix of a concrete switch, with flows and Jacobians evaluated at ``t_s``."""
    s = grid.sample(t_s)
    f_pre, _ = eval_mode(from_mode, x_minus, s, params_minus)
    f_post, _ = eval_mode(from_mode.other, x_plus, s, params_plus)
    rj = reset_jacobian(from_mode, x_minus, grid, params_minus, t_s, reset_map)
    gg = guard_gradient(from_mode, x_minus, sub_guard, grid, t_s, params_minus)
    inp = SaltationInputs(f_pre, f_post, rj.DR, gg.state, gg.dt, rj.dR_dt)
    build = saltation_matrix if strict else saltation_or_reset_jacobian
    return build(inp, sub_guard, t_s)


def is_psd(P, tol: float = 1e-10) -> bool:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or not np.all(np.isfinite(P)):
        return False
    sym = 0.5 * (P + P.T)
    if np.max(np.abs(P - P.T)) > tol * max(1.0, np.max(np.abs(P))):
        return False
    return bool(np.linalg.eigvalsh(sym).min() >= -tol * max(1.0, np.max(np.abs(sym))))


def covariance_jump(P_minus, Xi, W_R=None) -> np.ndarray:
    """``Xi P Xi^T + W_R``, symmetrized; ``W_R`` defaults to ``1e-8 I``."""
    P_minus = np.asarray(P_minus, dtype=float)
    if not is_psd(P_minus):
        raise NumericalDomainError("covariance before the jump is not symmetric positive semidefinite")
    Xi = np.atleast_2d(np.asarray(Xi, dtype=float))
    if W_R is None:
        W_R = W_R_DEFAULT * np.eye(Xi.shape[0])
    P = Xi @ P_minus @ Xi.T + np.asarray(W_R, dtype=float)
    return 0.5 * (P + P.T)
