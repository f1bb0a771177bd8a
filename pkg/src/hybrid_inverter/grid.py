"""Scripted exogenous grid voltage: magnitude, angle offset and frequency."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigurationError

OMEGA_NOMINAL = 2.0 * math.pi * 30.0


@dataclass(frozen=True)
class GridSegment:
    """One scripted segment.

    Values are reached ``ramp`` seconds after ``t_start`` by linear
    interpolation from the previous segment's values; ``ramp = 0`` is a step.
    ``v_angle`` is an offset added to the integral of ``omega``.
    """

    t_start: float
    v_mag: float
    v_angle: float = 0.0
    omega: float = OMEGA_NOMINAL
    ramp: float = 0.0


class GridSample(NamedTuple):
    v_mag: np.ndarray | float
    theta: np.ndarray | float
    omega: np.ndarray | float
    dv_dt: np.ndarray | float


class GridSignal:
    """Piecewise (optionally ramped) grid timeline, vectorized over time."""

    def __init__(self, segments: Sequence[GridSegment]):
        segments = list(segments)
        if not segments:
            raise ConfigurationError("grid signal needs at least one segment")
        for k, seg in enumerate(segments):
            if seg.v_mag < 0.0 or seg.ramp < 0.0 or seg.omega <= 0.0:
                raise ConfigurationError(f"invalid grid segment {k}: {seg}")
            if not all(math.isfinite(v) for v in (seg.t_start, seg.v_mag, seg.v_angle, seg.omega, seg.ramp)):
                raise ConfigurationError(f"non-finite grid segment {k}: {seg}")
            if k and seg.t_start <= segments[k - 1].t_start:
                raise ConfigurationError("grid segments must be strictly ordered in time")
            if k + 1 < len(segments) and seg.t_start + seg.ramp > segments[k + 1].t_start:
                raise ConfigurationError(f"ramp of segment {k} overlaps the next segment")
        if segments[0].ramp != 0.0:
            raise ConfigurationError("the first grid segment cannot ramp")
        self.segments = tuple(segments)
        self._t = np.array([s.t_start for s in segments])
        self._v = np.array([s.v_mag for s in segments])
        self._a = np.array([s.v_angle for s in segments])
        self._w = np.array([s.omega for s in segments])
        self._ramp = np.array([s.ramp for s in segments])
        self._v_prev = np.concatenate([self._v[:1], self._v[:-1]])
        self._a_prev = np.concatenate([self._a[:1], self._a[:-1]])
        self._w_prev = np.concatenate([self._w[:1], self._w[:-1]])
        # integral of omega from t_0 up to each segment start
        seg_int = np.zeros(len(segments))
        for k in range(1, len(segments)):
            seg_int[k] = seg_int[k - 1] + self._omega_integral(k - 1, self._t[k] - self._t[k - 1])
        self._w_int = seg_int

    def _omega_integral(self, k, tau):
        ramp = self._ramp[k]
        w0, w1 = self._w_prev[k], self._w[k]
        if ramp == 0.0:
            return w1 * tau
        tau_r = np.minimum(tau, ramp)
        ramp_part = w0 * tau_r + (w1 - w0) * tau_r**2 / (2.0 * ramp)
        return ramp_part + w1 * np.maximum(tau - ramp, 0.0)

    @classmethod
    def constant(cls, v_mag: float = 1.0, omega: float = OMEGA_NOMINAL, v_angle: float = 0.0) -> GridSignal:
        return cls([GridSegment(0.0, v_mag, v_angle, omega)])

    @classmethod
    def sag(
        cls,
        t_sag: float = 0.5,
        depth: float = 0.85,
        ramp: float = 0.01,
        t_recover: float = 1.5,
        recover_ramp: float = 0.01,
        v_nominal: float = 1.0,
        omega: float = OMEGA_NOMINAL,
    ) -> GridSignal:
        """Nominal voltage, linear ramp down to ``depth``, ramp back to nominal."""
        return cls([
            GridSegment(0.0, v_nominal, 0.0, omega),
            GridSegment(t_sag, depth, 0.0, omega, ramp),
            GridSegment(t_recover, v_nominal, 0.0, omega, recover_ramp),
        ])

    def sample(self, t) -> GridSample:
        """Grid quantities at time(s) ``t`` (scalar or array)."""
        t_arr = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(self._t, t_arr, side="right") - 1, 0, len(self._t) - 1)
        tau = t_arr - self._t[k]
        ramp = self._ramp[k]
        in_ramp = (ramp > 0.0) & (tau >= 0.0) & (tau < ramp)
        frac = np.where(in_ramp, tau / np.where(ramp > 0.0, ramp, 1.0), 1.0)
        v = self._v_prev[k] + frac * (self._v[k] - self._v_prev[k])
        a = self._a_prev[k] + frac * (self._a[k] - self._a_prev[k])
        w = self._w_prev[k] + frac * (self._w[k] - self._w_prev[k])
        rate = np.where(in_ramp, 1.0 / np.where(ramp > 0.0, ramp, 1.0), 0.0)
        dv = rate * (self._v[k] - self._v_prev[k])
        # omega integral inside the segment (before t_0 extrapolate with the first omega)
        tau_pos = np.maximum(tau, 0.0)
        tau_r = np.minimum(tau_pos, ramp)
        w0, w1 = self._w_prev[k], self._w[k]
        safe_ramp = np.where(ramp > 0.0, ramp, 1.0)
        inner = np.where(
            ramp > 0.0,
            w0 * tau_r + (w1 - w0) * tau_r**2 / (2.0 * safe_ramp) + w1 * np.maximum(tau_pos - ramp, 0.0),
            w1 * tau_pos,
        )
        inner = inner + np.minimum(tau, 0.0) * w1
        theta = a + self._w_int[k] + inner
        if t_arr.ndim == 0:
            return GridSample(float(v), float(theta), float(w), float(dv))
        return GridSample(v, theta, w, dv)

    def truncated(self, t_end: float) -> GridSignal:
        """The same timeline without the segments that start after ``t_end``."""
        keep = [s for s in self.segments if s.t_start <= t_end]
        return self if len(keep) == len(self.segments) else GridSignal(keep)

    def breakpoints(self) -> list[float]:
        """Times at which the timeline has a kink (segment starts and ramp ends)."""
        pts = []
        for s in self.segments[1:]:
            pts.append(s.t_start)
            if s.ramp > 0.0:
                pts.append(s.t_start + s.ramp)
        return pts

    def to_dict(self) -> dict:
        return {"segments": [s.__dict__.copy() for s in self.segments]}

    def __repr__(self) -> str:
        return f"GridSignal({list(self.segments)!r})"


def grid_in_frame(v_mag, theta_grid, theta_frame):
    """Grid voltage phasor rotated into a dq frame at angle ``theta_frame``."""
    delta = theta_grid - theta_frame
    return v_mag * np.cos(delta), v_mag * np.sin(delta)
