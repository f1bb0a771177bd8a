"""Discrete modes and the fixed state orderings of each mode."""

from __future__ import annotations

import enum

from .params import InverterParams


class Mode(str, enum.Enum):
    GFL = "GFL"
    GFM = "GFM"

    @property
    def other(self) -> Mode:
        return Mode.GFM if self is Mode.GFL else Mode.GFL


GFL_STATES = ("gamma_d", "gamma_q", "i_d", "i_q", "eta_pll", "theta_pll", "sigma_p", "sigma_q")
GFM_STATES = ("gamma_d", "gamma_q", "i_d", "i_q", "theta", "xi_d", "xi_q")
POWER_FILTER_STATES = ("p_m", "q_m")

# shared indices (inner loop and filter currents lead both vectors)
GAMMA_D, GAMMA_Q, I_D, I_Q = 0, 1, 2, 3
# GFL
ETA_PLL, THETA_PLL, SIGMA_P, SIGMA_Q = 4, 5, 6, 7
# GFM
THETA, XI_D, XI_Q = 4, 5, 6

MEASUREMENT_CHANNELS = ("i_d", "i_q", "v_d", "v_q")


def state_names(mode: Mode, params: InverterParams) -> tuple[str, ...]:
    names = GFL_STATES if mode is Mode.GFL else GFM_STATES
    return names + POWER_FILTER_STATES if params.filtered else names


def state_dim(mode: Mode, params: InverterParams) -> int:
    return len(state_names(mode, params))


def angle_index(mode: Mode) -> int:
    return THETA_PLL if mode is Mode.GFL else THETA
