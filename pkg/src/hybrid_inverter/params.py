"""Physical and control constants of the switching inverter."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

from .errors import ConfigurationError

MEASURED_POWER_CHOICES = ("instantaneous", "filtered")


@dataclass(frozen=True)
class InverterParams:
    """Inverter constants in per unit, rad/s and seconds.

    Defaults reproduce the published parameter table where values are given.
    Gains that the table omits (outer power loop, GFM voltage loop) and the
    power setpoints are chosen so that both modes are locally stable.

    ``p_0``/``q_0`` are the droop biases and ``r_eff``/``l_eff`` the filter-row
    impedance; the GFL->GFM reset rewrites them through :func:`dataclasses.replace`.
    ``r_eff=None`` means the nominal grid impedance ``(r_g, l_g)``.
    """

    r_f: float = 1.89
    l_f: float = 0.02
    r_g: float = 0.02
    l_g: float = 0.01
    k_p_pll: float = 0.02
    k_i_pll: float = 0.10
    k_pd: float = 0.10  # listed in the table, has no role in the PLL equations
    k_p_c: float = 1.2
    k_i_c: float = 40.0
    k_p_p: float = 0.5
    k_i_p: float = 20.0
    k_p_q: float = 0.5
    k_i_q: float = 20.0
    k_p_v: float = 0.5
    k_i_v: float = 20.0
    m_p: float = 0.02
    n_q: float = 0.012
    v_0: float = 1.0
    r_vi: float = 0.05
    l_vi: float = 0.05
    i_th: float = 0.40
    i_max: float = 1.20
    v_th_lo: float = 0.90
    v_th_hi: float = 1.10
    omega_th: float = 2.0 * math.pi * 0.05
    omega_0: float = 2.0 * math.pi * 30.0
    omega_b: float | None = None
    T_hold: float = 0.2
    p_ref: float = 0.5
    q_ref: float = 0.8
    p_0: float = 0.5
    q_0: float = 0.8
    r_eff: float | None = None
    l_eff: float | None = None
    measured_power: str = "instantaneous"
    omega_f: float = 2.0 * math.pi * 10.0
    conventional_pairing: bool = False

    def __post_init__(self):
        if self.omega_b is None:
            object.__setattr__(self, "omega_b", self.omega_0)
        if self.measured_power not in MEASURED_POWER_CHOICES:
            raise ConfigurationError(
                f"measured_power must be one of {MEASURED_POWER_CHOICES}, got {self.measured_power!r}"
            )
        for name in ("p_ref", "q_ref", "p_0", "q_0"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigurationError(f"{name} must be finite")
        positive = (
            "r_f", "l_f", "r_g", "l_g", "k_p_pll", "k_i_pll", "k_pd", "k_p_c", "k_i_c",
            "k_p_p", "k_i_p", "k_p_q", "k_i_q", "k_p_v", "k_i_v", "m_p", "n_q", "v_0",
            "r_vi", "l_vi", "i_th", "i_max", "v_th_lo", "v_th_hi", "omega_th", "omega_0",
            "omega_b", "T_hold", "omega_f",
        )
        for name in positive:
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ConfigurationError(f"{name} must be strictly positive, got {value!r}")
        for name in ("r_eff", "l_eff"):
            value = getattr(self, name)
            if value is not None and not (math.isfinite(value) and value > 0.0):
                raise ConfigurationError(f"{name} must be strictly positive, got {value!r}")
        if not self.i_th < self.i_max:
            raise ConfigurationError("i_th must be smaller than i_max")
        if not self.v_th_lo < self.v_0 < self.v_th_hi:
            raise ConfigurationError("v_0 must lie strictly inside (v_th_lo, v_th_hi)")

    @property
    def r_line(self) -> float:
        """Resistance used in the filter current rows."""
        return self.r_g if self.r_eff is None else self.r_eff

    @property
    def l_line(self) -> float:
        """Inductance used in the filter current rows."""
        return self.l_g if self.l_eff is None else self.l_eff

    @property
    def filtered(self) -> bool:
        return self.measured_power == "filtered"

    def replace(self, **changes) -> InverterParams:
        return dataclasses.replace(self, **changes)

    def nominal(self) -> InverterParams:
        """Copy with the effective impedance restored to the grid impedance."""
        return dataclasses.replace(self, r_eff=None, l_eff=None)

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in dataclasses.fields(cls))
