"""Fixed-step hybrid simulation with event location and resets.

Time runs on a fixed grid ``t_k = t_0 + k dt``.  A guard crossing inside a
step is located by bisection on RK4 sub-steps from the step start; the reset
is applied at ``t_s`` and the rest of the step is integrated in the new mode,
so the flow never straddles a jump and samples stay on the grid.

The heavy lifting is done by the compiled kernels in :mod:`._fast`; the
public single-step helpers (:func:`step_rk4`, :func:`locate_event`) work on
any Python vector field.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.optimize import fsolve

from . import _fast
from .dynamics import eval_mode, smoothed_measure
from .errors import ConfigurationError, EventLocationError, NumericalDomainError, StepFailure
from .grid import GridSignal
from .hybrid import (
    DWELL, FREQUENCY, VOLTAGE, HybridState, SwitchRecord, apply_reset, frequency_violation,
    voltage_violation,
)
from .params import InverterParams
from .states import (
    ETA_PLL, I_D, I_Q, MEASUREMENT_CHANNELS, SIGMA_P, SIGMA_Q, THETA_PLL, Mode, angle_index,
    state_dim, state_names,
)

MODE_CODES = {Mode.GFL: 0, Mode.GFM: 1}
CONTINUOUS_CODE = 2
MAX_STATE_DIM = 10
OUTPUT_CHANNELS = ("v_d", "v_q", "i_d_ref", "i_q_ref", "p", "q", "p_m", "q_m", "omega", "v_ref",
                   "v_grid_d", "v_grid_q")


def _kind(mode: Mode) -> int:
    return _fast.KIND_GFL if mode is Mode.GFL else _fast.KIND_GFM


@dataclass(frozen=True)
class SimConfig:
    """Integration and truth-generation settings.

    ``process_noise`` is a standard-deviation density (per sqrt(s)): each step
    adds ``N(0, process_noise**2 * dt)`` to every state except the angle.  A
    mapping ``{Mode: sequence}`` gives per-state densities instead.
    """

    dt: float = 1e-5
    t_end: float = 2.5
    event_tol: float = 1e-12
    max_bisections: int = 30
    process_noise: float | dict = 0.0
    seed: int = 0
    no_reset_map: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise ConfigurationError(f"dt must be positive, got {self.dt!r}")
        if not (math.isfinite(self.t_end) and self.t_end >= 0.0):
            raise ConfigurationError(f"t_end must be non-negative, got {self.t_end!r}")
        if not self.event_tol > 0.0:
            raise ConfigurationError("event_tol must be positive")
        if int(self.max_bisections) < 1:
            raise ConfigurationError("max_bisections must be at least 1")
        if isinstance(self.process_noise, dict):
            for value in self.process_noise.values():
                if np.any(np.asarray(value, dtype=float) < 0.0):
                    raise ConfigurationError("process noise densities must be non-negative")
        elif not self.process_noise >= 0.0:
            raise ConfigurationError("process_noise must be non-negative")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def noise_scale(self, mode: Mode, params: InverterParams) -> np.ndarray:
        """Per-step standard deviation of the additive truth noise."""
        n = state_dim(mode, params)
        if isinstance(self.process_noise, dict):
            dens = self.process_noise.get(mode, self.process_noise.get(mode.value, 0.0))
            dens = np.broadcast_to(np.asarray(dens, dtype=float), (n,)).copy()
        else:
            dens = np.full(n, float(self.process_noise))
            dens[angle_index(mode)] = 0.0
        return dens * math.sqrt(self.dt)

    @property
    def has_noise(self) -> bool:
        if isinstance(self.process_noise, dict):
            return any(np.any(np.asarray(v, dtype=float) > 0.0) for v in self.process_noise.values())
        return self.process_noise > 0.0


def step_rk4(x, t: float, dt: float, field: Callable) -> np.ndarray:
    """Classical RK4 step of ``x' = field(x, t)``; raises :class:`StepFailure` on non-finite stages."""
    x = np.asarray(x, dtype=float)
    k1 = np.asarray(field(x, t))
    k2 = np.asarray(field(x + 0.5 * dt * k1, t + 0.5 * dt))
    k3 = np.asarray(field(x + 0.5 * dt * k2, t + 0.5 * dt))
    k4 = np.asarray(field(x + dt * k3, t + dt))
    for k in (k1, k2, k3, k4):
        if not np.all(np.isfinite(k)):
            raise StepFailure(f"non-finite RK4 stage at t={t!r}")
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class LocatedEvent(NamedTuple):
    t_s: float
    x: np.ndarray
    residual: float
    converged: bool


def locate_event(x_pre, t_pre: float, dt: float, field: Callable, guard: Callable,
                 event_tol: float = 1e-12, max_bisections: int = 30, strict: bool = False) -> LocatedEvent:
    """Bisect the first sub-step after which ``guard(x, t)`` becomes non-negative.

    Sub-step states are single RK4 steps of length ``tau`` from ``x_pre``.
    The returned point is the right end of the final bracket, so the guard
    holds there.  ``strict`` requires ``guard > 0`` instead of ``>= 0``.
    """
    def fired(g):
        return g > 0.0 if strict else g >= 0.0

    x_pre = np.asarray(x_pre, dtype=float)
    g0 = float(guard(x_pre, t_pre))
    if fired(g0):
        return LocatedEvent(float(t_pre), x_pre.copy(), g0, True)
    x_hi = step_rk4(x_pre, t_pre, dt, field)
    g_hi = float(guard(x_hi, t_pre + dt))
    if not fired(g_hi):
        raise EventLocationError(f"guard does not change sign on [{t_pre!r}, {t_pre + dt!r}]")
    lo, hi = 0.0, dt
    converged = abs(g_hi) <= event_tol
    for _ in range(max_bisections):
        if converged:
            break
        mid = 0.5 * (lo + hi)
        x_mid = step_rk4(x_pre, t_pre, mid, field)
        g_mid = float(guard(x_mid, t_pre + mid))
        if fired(g_mid):
            hi, x_hi, g_hi = mid, x_mid, g_mid
        else:
            lo = mid
        converged = abs(g_hi) <= event_tol
    if not converged:
        warnings.warn(f"event location stopped after {max_bisections} bisections with residual {g_hi:.3e}",
                      RuntimeWarning, stacklevel=2)
    return LocatedEvent(t_pre + hi, x_hi, g_hi, converged)


@dataclass
class FlowPiece:
    """One reset-free stretch of flow: a ``first_dt`` step, ``n_full`` steps of ``dt``, a ``last_dt`` step."""

    mode: Mode
    params: InverterParams
    x_start: np.ndarray
    t_start: float
    first_dt: float
    n_full: int
    last_dt: float
    dt: float

    @property
    def t_end(self) -> float:
        return self.t_start + self.first_dt + self.n_full * self.dt + self.last_dt


@dataclass
class EventHit:
    """A switch encountered while advancing, with the states on both sides."""

    record: SwitchRecord
    mode_minus: Mode
    x_minus: np.ndarray
    params_minus: InverterParams
    x_plus: np.ndarray
    params_plus: InverterParams
    step: int


@dataclass
class AdvanceResult:
    state: HybridState
    pieces: list
    events: list
    steps: int
    failure: str | None = None


class HybridStepper:
    """Event-aware fixed-step propagation of one hybrid state on a given grid signal."""

    def __init__(self, grid: GridSignal, dt: float, event_tol: float = 1e-12, max_bisections: int = 30,
                 reset_map: bool = True):
        self.grid = grid
        self.G = _fast.pack_grid(grid)
        self.dt = float(dt)
        self.event_tol = event_tol
        self.max_bisections = int(max_bisections)
        self.reset_map = reset_map
        self._packed: dict[int, tuple] = {}

    @classmethod
    def from_config(cls, grid: GridSignal, cfg: SimConfig) -> HybridStepper:
        return cls(grid, cfg.dt, cfg.event_tol, cfg.max_bisections, not cfg.no_reset_map)

    def packed(self, params: InverterParams) -> np.ndarray:
        key = id(params)
        hit = self._packed.get(key)
        if hit is None or hit[0] is not params:
            hit = (params, _fast.pack_params(params))
            self._packed[key] = hit
        return hit[1]

    def field(self, mode: Mode, params: InverterParams) -> Callable:
        kind, P, G = _kind(mode), self.packed(params), self.G
        alg = np.empty(_fast.N_ALG)

        def f(x, t):
            dx = np.empty(x.shape[0])
            _fast.rhs(kind, np.ascontiguousarray(x, dtype=float), float(t), P, G, dx, alg)
            return dx
        return f

    def step(self, mode: Mode, x, t: float, h: float, params: InverterParams) -> np.ndarray:
        if h <= 0.0:
            return np.array(x, dtype=float)
        out = np.empty(len(x))
        if not _fast.rk4_inplace(_kind(mode), np.ascontiguousarray(x, dtype=float), float(t), float(h),
                                 self.packed(params), self.G, out):
            raise StepFailure(f"non-finite RK4 stage at t={t!r}")
        return out

    def _gfl_guard(self, params):
        P, G = self.packed(params), self.G
        return lambda x, t: _fast.gfl_guard(np.ascontiguousarray(x, dtype=float), float(t), P, G)

    def _gfm_entry(self, params):
        P, G = self.packed(params), self.G
        return lambda x, t: -_fast.gfm_conditions(np.ascontiguousarray(x, dtype=float), float(t), P, G)

    def sub_guard(self, x, t: float, params: InverterParams) -> str:
        """Which GFL sub-guard fired (voltage wins ties)."""
        s = self.grid.sample(t)
        P = self.packed(params)
        omega = _fast.omega_of(_fast.KIND_GFL, np.ascontiguousarray(x, dtype=float), float(t), P, self.G)
        g_v = float(voltage_violation(s.v_mag, params))
        g_w = float(frequency_violation(omega - params.omega_0, params))
        return VOLTAGE if (g_v >= 0.0 or g_v >= g_w) else FREQUENCY

    def _switch(self, mode, x_minus, t_s, params, sub, residual):
        return apply_reset(mode, x_minus, self.grid.sample(t_s), params, t_s, sub,
                           reset_map=self.reset_map, guard_residual=residual)

    def advance(self, state: HybridState, t0: float, n_steps: int, noise_unit: np.ndarray | None = None,
                noise_scale: Callable | None = None, rec: np.ndarray | None = None,
                mode_rec: np.ndarray | None = None, param_rec: list | None = None,
                strict_failure: bool = True, forced: Sequence | None = None) -> AdvanceResult:
        """Advance ``n_steps`` grid steps from ``t0`` through any switches.

        ``noise_unit`` (shape ``(n_steps, >= dim)``, standard normal) is scaled
        by ``noise_scale(mode, params)`` and added after each step.  ``rec``,
        ``mode_rec`` and ``param_rec`` (length ``n_steps + 1``) receive the
        sampled states, mode codes and parameter sets when given.

        ``forced`` replaces guard monitoring by a schedule of
        ``(t_s, from_mode, sub_guard)`` switches (an externally supplied mode
        signal); entries outside the horizon or for the other mode are ignored.
        """
        t_stop = t0 + n_steps * self.dt
        schedule = None
        if forced is not None:
            schedule = sorted((float(ts), Mode(fm), str(sg)) for ts, fm, sg in forced if t0 <= ts < t_stop)
        dt = self.dt
        mode, x, params, dwell = state.mode, np.array(state.x, dtype=float), state.params, state.dwell_clock
        use_noise = noise_unit is not None
        record = rec is not None
        if record:
            rec[0, :x.size] = x
        if mode_rec is not None:
            mode_rec[0] = MODE_CODES[mode]
        if param_rec is not None:
            param_rec[0] = params
        pieces, events = [], []
        piece_x, piece_t, piece_first, piece_k0 = x.copy(), float(t0), 0.0, 0
        k = 0
        failure = None

        def commit(k_next, x_new):
            if record:
                rec[k_next, :x_new.size] = x_new
                rec[k_next, x_new.size:] = np.nan
            if mode_rec is not None:
                mode_rec[k_next] = MODE_CODES[mode]
            if param_rec is not None:
                param_rec[k_next] = params

        def noisy(x_new, k_row):
            if not use_noise:
                return x_new
            return x_new + noise_unit[k_row, :x_new.size] * noise_scale(mode, params)

        while k < n_steps:
            kind, P, n = _kind(mode), self.packed(params), x.size
            tk = t0 + k * dt
            remaining = n_steps - k
            pending = None
            if schedule is not None:
                while schedule and (schedule[0][0] < tk or schedule[0][1] is not mode):
                    schedule.pop(0)
                if schedule:
                    pending = schedule.pop(0)
                    remaining = min(int(math.floor((pending[0] - tk) / dt)), n_steps - k - 1)
            if use_noise:
                nz = np.ascontiguousarray(noise_unit[k:n_steps, :n] * noise_scale(mode, params))
            else:
                nz = np.zeros((1, n))
            if record:
                rv = rec[k:, :]
            else:
                rv = np.zeros((1, n))
            steps, status, dwell, x_last = _fast.run_flow(kind, x, tk, dt, remaining, P, self.G, nz, rv, dwell,
                                                         schedule is None, use_noise, record)
            if record and n < rec.shape[1]:
                rec[k + 1:k + steps + 1, n:] = np.nan
            if mode_rec is not None:
                mode_rec[k + 1:k + steps + 1] = MODE_CODES[mode]
            if param_rec is not None:
                param_rec[k + 1:k + steps + 1] = [params] * steps
            k += steps
            x = np.array(x_last)
            if status == _fast.STATUS_DONE and pending is None:
                break
            tk = t0 + k * dt
            if status == _fast.STATUS_FAIL:
                failure = f"non-finite state in {mode.value} step at t={tk!r}"
                if strict_failure:
                    raise StepFailure(failure)
                break
            if status == _fast.STATUS_ENTRY:
                loc = locate_event(x, tk, dt, self.field(mode, params), self._gfm_entry(params),
                                   self.event_tol, self.max_bisections, strict=True)
                dwell = (tk + dt) - loc.t_s
                x = noisy(self.step(mode, x, tk, dt, params), k)
                k += 1
                commit(k, x)
                continue
            # a switch inside step k
            if pending is not None:
                t_s = min(max(pending[0], tk), tk + dt)
                x_minus = self.step(mode, x, tk, t_s - tk, params)
                residual, sub = math.nan, pending[2]
            elif mode is Mode.GFL:
                loc = locate_event(x, tk, dt, self.field(mode, params), self._gfl_guard(params),
                                   self.event_tol, self.max_bisections)
                t_s, x_minus, residual = loc.t_s, loc.x, loc.residual
                sub = self.sub_guard(x_minus, t_s, params)
            else:
                tau = min(max(params.T_hold - dwell, 0.0), dt)
                x_minus = self.step(mode, x, tk, tau, params)
                t_s = tk + tau
                residual = (dwell + tau) - params.T_hold
                sub = DWELL
            pieces.append(FlowPiece(mode, params, piece_x, piece_t, piece_first, k - piece_k0, t_s - tk, dt))
            x_plus, params_plus, switch = self._switch(mode, x_minus, t_s, params, sub, residual)
            events.append(EventHit(switch, mode, x_minus, params, x_plus, params_plus, k))
            mode, params, dwell = mode.other, params_plus, 0.0
            rest = (tk + dt) - t_s
            x = noisy(self.step(mode, x_plus, t_s, rest, params), k)
            k += 1
            commit(k, x)
            piece_x, piece_t, piece_first, piece_k0 = x_plus.copy(), t_s, rest, k
        if failure is None:
            pieces.append(FlowPiece(mode, params, piece_x, piece_t, piece_first, k - piece_k0, 0.0, dt))
        final = HybridState(mode, x, params, dwell)
        return AdvanceResult(final, pieces, events, k, failure)


@dataclass
class Trajectory:
    """Sampled run on the fixed time grid; padded columns beyond a mode's dimension are NaN."""

    t: np.ndarray
    mode: np.ndarray
    x: np.ndarray
    param_sets: list
    param_index: np.ndarray
    events: list
    grid: GridSignal
    model: str = "hybrid"
    k_gain: float | None = None
    v_switch: float | None = None
    failure: str | None = None
    _outputs: dict | None = field(default=None, repr=False)

    @property
    def truncated(self) -> bool:
        return self.failure is not None

    def __len__(self) -> int:
        return self.t.size

    def mode_of(self, k: int) -> Mode | None:
        code = int(self.mode[k])
        return None if code == CONTINUOUS_CODE else (Mode.GFL if code == 0 else Mode.GFM)

    def state(self, k: int) -> np.ndarray:
        params = self.param_sets[self.param_index[k]]
        mode = self.mode_of(k) or Mode.GFL
        return self.x[k, :state_dim(mode, params)].copy()

    def hybrid_state(self, k: int) -> HybridState:
        params = self.param_sets[self.param_index[k]]
        return HybridState(self.mode_of(k) or Mode.GFL, self.state(k), params)

    @property
    def outputs(self) -> dict:
        """Algebraic channels at every sample (computed on first access)."""
        if self._outputs is None:
            self._outputs = self._compute_outputs()
        return self._outputs

    def _compute_outputs(self) -> dict:
        m = self.t.size
        alg = np.full((m, _fast.N_ALG), np.nan)
        G = _fast.pack_grid(self.grid)
        keys = self.mode.astype(np.int64) * 100000 + self.param_index
        for key in np.unique(keys):
            rows = np.nonzero(keys == key)[0]
            code, pidx = int(key // 100000), int(key % 100000)
            params = self.param_sets[pidx]
            if code == CONTINUOUS_CODE:
                kind, n = _fast.KIND_CONT, state_dim(Mode.GFL, params)
                P = _fast.pack_params(params, self.k_gain, self.v_switch)
            else:
                mode = Mode.GFL if code == 0 else Mode.GFM
                kind, n = _kind(mode), state_dim(mode, params)
                P = _fast.pack_params(params)
            X = np.ascontiguousarray(self.x[rows, :n])
            alg[rows] = _fast.eval_outputs(kind, X, np.ascontiguousarray(self.t[rows]), P, G)
        out = {name: alg[:, j] for j, name in enumerate(OUTPUT_CHANNELS)}
        out["i_d"] = self.x[:, I_D].copy()
        out["i_q"] = self.x[:, I_Q].copy()
        theta = np.full(m, np.nan)
        for code, mode in ((0, Mode.GFL), (1, Mode.GFM), (CONTINUOUS_CODE, Mode.GFL)):
            sel = self.mode == code
            theta[sel] = self.x[sel, angle_index(mode)]
        out["theta"] = theta
        if self.model == "continuous":
            # the blended model's terminal voltage is the blend of both measurement maps
            z = self._continuous_measurements()
            out["v_d"], out["v_q"] = z[:, 2], z[:, 3]
        return out

    def _continuous_measurements(self) -> np.ndarray:
        params = self.param_sets[0]
        n = state_dim(Mode.GFL, params)
        return continuous_measure_batch(self.x[:, :n], self.t, self.grid, params, self.k_gain, self.v_switch)

    def measurements(self) -> np.ndarray:
        """Noise-free measurement vectors ``[i_d, i_q, v_d, v_q]`` at every sample."""
        out = self.outputs
        return np.column_stack([out[c] for c in MEASUREMENT_CHANNELS])

    def current_magnitude(self) -> np.ndarray:
        return np.hypot(self.x[:, I_D], self.x[:, I_Q])


def continuous_measure_batch(X, ts, grid: GridSignal, params: InverterParams, k_gain: float,
                             v_switch: float | None = None) -> np.ndarray:
    """Blended measurement of the smoothed model for a batch of GFL-coordinate states (rows)."""
    X = np.asarray(X, dtype=float)
    s = grid.sample(np.asarray(ts, dtype=float))
    return smoothed_measure(X.T, s, params, k_gain, v_switch).T


def _as_state(x0, params: InverterParams | None) -> HybridState:
    if isinstance(x0, HybridState):
        return x0.copy() if params is None else HybridState(x0.mode, x0.x.copy(), params, x0.dwell_clock)
    if params is None:
        raise ConfigurationError("params are required when x0 is a plain vector")
    return HybridState(Mode.GFL, np.asarray(x0, dtype=float), params)


def simulate_hybrid(x0, grid: GridSignal, params: InverterParams | None = None,
                    cfg: SimConfig | None = None, t0: float = 0.0) -> Trajectory:
    """Run the hybrid automaton from ``x0`` (a :class:`HybridState` or a GFL vector).

    A step failure truncates the trajectory; the reason is kept in ``failure``.
    """
    cfg = cfg or SimConfig()
    state = _as_state(x0, params)
    n_steps = cfg.n_steps
    stepper = HybridStepper.from_config(grid, cfg)
    rec = np.full((n_steps + 1, MAX_STATE_DIM), np.nan)
    mode_rec = np.zeros(n_steps + 1, dtype=np.int8)
    param_rec = [None] * (n_steps + 1)
    noise_unit = None
    if cfg.has_noise:
        rng = np.random.default_rng(cfg.seed)
        noise_unit = rng.standard_normal((n_steps, MAX_STATE_DIM))
    result = stepper.advance(state, t0, n_steps, noise_unit, cfg.noise_scale, rec, mode_rec, param_rec,
                             strict_failure=False)
    m = result.steps + 1
    param_sets, index = [], np.zeros(m, dtype=np.int64)
    seen: dict[int, int] = {}
    for j in range(m):
        p = param_rec[j]
        slot = seen.get(id(p))
        if slot is None:
            slot = seen[id(p)] = len(param_sets)
            param_sets.append(p)
        index[j] = slot
    return Trajectory(
        t=t0 + np.arange(m) * cfg.dt, mode=mode_rec[:m], x=rec[:m], param_sets=param_sets,
        param_index=index, events=[e.record for e in result.events], grid=grid, failure=result.failure,
    )


def simulate_continuous(x0, grid: GridSignal, params: InverterParams, cfg: SimConfig | None = None,
                        k_gain: float = 20.0, v_switch: float | None = None, t0: float = 0.0) -> Trajectory:
    """Integrate the smoothed single-model baseline on GFL coordinates (no events, no resets)."""
    cfg = cfg or SimConfig()
    if not k_gain > 0.0:
        raise NumericalDomainError("k_gain must be positive")
    x = np.array(x0.x if isinstance(x0, HybridState) else x0, dtype=float)
    n = state_dim(Mode.GFL, params)
    if x.shape != (n,):
        raise ConfigurationError(f"continuous model state must have shape ({n},)")
    n_steps = cfg.n_steps
    P = _fast.pack_params(params, k_gain, v_switch)
    G = _fast.pack_grid(grid)
    rec = np.full((n_steps + 1, MAX_STATE_DIM), np.nan)
    if cfg.has_noise:
        rng = np.random.default_rng(cfg.seed)
        nz = rng.standard_normal((n_steps, MAX_STATE_DIM))[:, :n] * cfg.noise_scale(Mode.GFL, params)
        nz = np.ascontiguousarray(nz)
    else:
        nz = np.zeros((1, n))
    rv = np.zeros((n_steps + 1, n))
    steps, status, _, _ = _fast.run_flow(_fast.KIND_CONT, x, t0, cfg.dt, n_steps, P, G, nz, rv, 0.0,
                                         False, cfg.has_noise, True)
    rec[:, :n] = rv
    failure = None if status == _fast.STATUS_DONE else f"non-finite state at t={t0 + steps * cfg.dt!r}"
    m = steps + 1
    return Trajectory(
        t=t0 + np.arange(m) * cfg.dt, mode=np.full(m, CONTINUOUS_CODE, dtype=np.int8), x=rec[:m],
        param_sets=[params], param_index=np.zeros(m, dtype=np.int64), events=[], grid=grid,
        model="continuous", k_gain=k_gain, v_switch=v_switch, failure=failure,
    )


def equilibrium_gfl(params: InverterParams, v_mag: float = 1.0, theta_grid: float = 0.0) -> np.ndarray:
    """GFL operating point locked to a constant grid phasor (PLL error and integrator zero)."""
    from .grid import GridSample

    grid = GridSample(v_mag, theta_grid, params.omega_0, 0.0)
    n = state_dim(Mode.GFL, params)
    free = [0, 1, 2, 3, SIGMA_P, SIGMA_Q]

    def unpack(z):
        x = np.zeros(n)
        x[free] = z
        x[ETA_PLL] = 0.0
        x[THETA_PLL] = theta_grid
        if params.filtered:
            x[8], x[9] = params.p_ref, params.q_ref
        return x

    def residual(z):
        dx, _ = eval_mode(Mode.GFL, unpack(z), grid, params)
        return dx[free]

    # start on the branch where q falls with i_q (the stable one): q ~ X |i|^2 - V i_q
    x_line = params.omega_0 * params.l_line
    i_d0 = params.p_ref / max(v_mag, 1e-6)
    disc = v_mag**2 - 4.0 * x_line * (x_line * i_d0**2 - params.q_ref)
    i_q0 = (v_mag - math.sqrt(disc)) / (2.0 * x_line) if disc >= 0.0 else 0.0
    z0 = np.array([0.0, 0.0, i_d0, i_q0, 0.0, 0.0])
    z, _, _, msg = fsolve(residual, z0, full_output=True, xtol=1e-13)
    if np.max(np.abs(residual(z))) > 1e-9:
        raise NumericalDomainError(f"GFL equilibrium solve failed: {msg}")
    return unpack(z)


def mode_dims(params: InverterParams) -> dict:
    return {m: state_dim(m, params) for m in Mode}


def state_labels(mode: Mode, params: InverterParams) -> Sequence[str]:
    return state_names(mode, params)
