"""Hybrid EKF with saltation covariance jumps, and the smoothed-model EKF baseline.

Each filter cycle predicts over one measurement interval (several
integration steps).  If the predicted estimate crosses a guard inside the
interval, the covariance is carried through the switch as

    P <- F2 (Xi (F1 P F1^T) Xi^T + W_R) F2^T + Q

with ``F1``/``F2`` the finite-difference flow-map Jacobians before and after
the switch instant and ``Xi`` the saltation matrix.  A guard that fires on the
corrected estimate triggers the same jump at the measurement time.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _fast
from .errors import ConfigurationError, FilterDivergenceError, HybridInverterError
from .grid import GridSignal
from .hybrid import HybridState, SwitchRecord, apply_reset
from .params import InverterParams
from .saltation import W_R_DEFAULT, SaltationInputs, covariance_jump, event_saltation, saltation_or_reset_jacobian
from .sim import (
    CONTINUOUS_CODE, MAX_STATE_DIM, MODE_CODES, EventHit, FlowPiece, HybridStepper, _kind, locate_event,
    step_rk4,
)
from .states import I_D, I_Q, Mode, state_dim

NIS_BAND_95_DOF4 = (0.484, 11.143)
JACOBIAN_STEP = 1e-6


def default_sigma() -> np.ndarray:
    """Measurement covariance with variances linearly spaced from 1e-5 to 1e-4."""
    return np.diag(np.linspace(1e-5, 1e-4, 4))


@dataclass
class NoiseConfig:
    """Filter noise covariances; ``None`` entries take the default for the state dimension.

    ``Q_gfl``/``Q_gfm`` (default ``q_scale * I``) are continuous-time process
    noise densities: a prediction over ``dt`` seconds adds ``Q * dt``.
    ``Sigma`` and ``W_R`` are discrete covariances per measurement and per
    switch.
    """

    q_scale: float = 1e-6
    Q_gfl: np.ndarray | None = None
    Q_gfm: np.ndarray | None = None
    Sigma: np.ndarray = field(default_factory=default_sigma)
    w_r_scale: float = W_R_DEFAULT
    W_R_gfl: np.ndarray | None = None
    W_R_gfm: np.ndarray | None = None

    def __post_init__(self):
        self.Sigma = np.asarray(self.Sigma, dtype=float)
        if self.Sigma.shape != (4, 4):
            raise ConfigurationError("Sigma must be 4x4")
        if np.linalg.eigvalsh(0.5 * (self.Sigma + self.Sigma.T)).min() <= 0.0:
            raise ConfigurationError("Sigma must be positive definite")
        if self.q_scale < 0.0 or self.w_r_scale < 0.0:
            raise ConfigurationError("noise scales must be non-negative")
        for name in ("Q_gfl", "Q_gfm", "W_R_gfl", "W_R_gfm"):
            M = getattr(self, name)
            if M is not None:
                M = np.asarray(M, dtype=float)
                if M.ndim != 2 or M.shape[0] != M.shape[1] or np.linalg.eigvalsh(0.5 * (M + M.T)).min() < -1e-14:
                    raise ConfigurationError(f"{name} must be square positive semidefinite")
                setattr(self, name, M)

    def Q(self, mode: Mode, n: int) -> np.ndarray:
        M = self.Q_gfl if mode is Mode.GFL else self.Q_gfm
        return self.q_scale * np.eye(n) if M is None else M

    def Q_discrete(self, mode: Mode, n: int, dt: float) -> np.ndarray:
        return self.Q(mode, n) * dt

    def W_R(self, mode: Mode, n: int) -> np.ndarray:
        M = self.W_R_gfl if mode is Mode.GFL else self.W_R_gfm
        return self.w_r_scale * np.eye(n) if M is None else M


@dataclass
class EstimatorBelief:
    mode: Mode
    x_hat: np.ndarray
    P: np.ndarray
    params: InverterParams
    t: float = 0.0
    dwell_clock: float = 0.0
    innovation: np.ndarray | None = None
    nis: float = math.nan
    S: np.ndarray | None = None

    def __post_init__(self):
        self.x_hat = np.asarray(self.x_hat, dtype=float)
        self.P = np.asarray(self.P, dtype=float)
        n = self.x_hat.size
        if self.P.shape != (n, n):
            raise ConfigurationError(f"covariance must be {n}x{n}")

    def copy(self) -> EstimatorBelief:
        return EstimatorBelief(self.mode, self.x_hat.copy(), self.P.copy(), self.params, self.t,
                               self.dwell_clock, None if self.innovation is None else self.innovation.copy(),
                               self.nis, None if self.S is None else self.S.copy())


def _symmetrize(P):
    return 0.5 * (P + P.T)


def _check_finite(b: EstimatorBelief, where: str):
    if not (np.all(np.isfinite(b.x_hat)) and np.all(np.isfinite(b.P))):
        raise FilterDivergenceError(f"non-finite estimate after {where} at t={b.t!r}")


def flow_jacobian(kind: int, x, t0: float, first_dt: float, dt: float, n_full: int, last_dt: float,
                  P_packed: np.ndarray, G: np.ndarray, h: float = JACOBIAN_STEP) -> np.ndarray:
    """Central finite-difference Jacobian of a fixed-schedule RK4 flow map."""
    x = np.asarray(x, dtype=float)
    n = x.size
    X = np.empty((2 * n, n))
    X[:n] = x + h * np.eye(n)
    X[n:] = x - h * np.eye(n)
    Y, ok = _fast.integrate_batch(kind, X, t0, first_dt, dt, n_full, last_dt, P_packed, G)
    if not ok:
        raise FilterDivergenceError(f"non-finite flow while differentiating at t={t0!r}")
    return ((Y[:n] - Y[n:]) / (2.0 * h)).T


def piece_jacobian(piece: FlowPiece, stepper: HybridStepper, h: float = JACOBIAN_STEP) -> np.ndarray:
    return flow_jacobian(_kind(piece.mode), piece.x_start, piece.t_start, piece.first_dt, piece.dt,
                         piece.n_full, piece.last_dt, stepper.packed(piece.params), stepper.G, h)


def measurement_rows(kind: int, X, t: float, P_packed: np.ndarray, G: np.ndarray) -> np.ndarray:
    """``[i_d, i_q, v_d, v_q]`` for each row of ``X`` (blended voltages for the smoothed model)."""
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
    alg = _fast.eval_outputs(kind, X, np.full(X.shape[0], float(t)), P_packed, G)
    return np.column_stack([X[:, I_D], X[:, I_Q], alg[:, _fast.A_VD], alg[:, _fast.A_VQ]])


def measurement_jacobian(kind: int, x, t: float, P_packed: np.ndarray, G: np.ndarray,
                         h: float = JACOBIAN_STEP):
    x = np.asarray(x, dtype=float)
    n = x.size
    X = np.vstack([x, x + h * np.eye(n), x - h * np.eye(n)])
    Z = measurement_rows(kind, X, t, P_packed, G)
    H = ((Z[1:n + 1] - Z[n + 1:]) / (2.0 * h)).T
    return Z[0], H


def nis(innovation, S) -> float:
    """Normalized innovation squared ``nu^T S^-1 nu``."""
    nu = np.asarray(innovation, dtype=float)
    S = np.atleast_2d(np.asarray(S, dtype=float))
    try:
        c = np.linalg.cholesky(0.5 * (S + S.T))
    except np.linalg.LinAlgError as exc:
        raise FilterDivergenceError("innovation covariance is not positive definite") from exc
    w = np.linalg.solve(c, nu)
    return float(w @ w)


def kalman_update(x, P, z, z_pred, H, Sigma):
    """Joseph-form EKF update; returns ``(x, P, innovation, S)``."""
    n = x.size
    nu = np.asarray(z, dtype=float) - z_pred
    S = _symmetrize(H @ P @ H.T + Sigma)
    PHt = P @ H.T
    try:
        K = np.linalg.solve(S, PHt.T).T
        if np.linalg.cond(S) > 1e14:
            raise np.linalg.LinAlgError("ill-conditioned")
    except np.linalg.LinAlgError:
        warnings.warn("innovation covariance is singular; using a regularized inverse", RuntimeWarning,
                      stacklevel=2)
        K = PHt @ np.linalg.pinv(S, rcond=1e-12)
    A = np.eye(n) - K @ H
    P_new = _symmetrize(A @ P @ A.T + K @ Sigma @ K.T)
    return x + K @ nu, P_new, nu, S


@dataclass
class JumpLog:
    t_s: float
    from_mode: Mode
    to_mode: Mode
    sub_guard: str
    alpha: float
    fallback: bool
    trigger: str
    record: SwitchRecord | None = None


class HybridEKF:
    """Mode-aware EKF whose switches come from the estimate (or a supplied schedule)."""

    def __init__(self, grid: GridSignal, noise: NoiseConfig, dt: float, steps_per_measurement: int,
                 event_tol: float = 1e-12, max_bisections: int = 30, reset_map: bool = True,
                 oracle_schedule: Sequence | None = None):
        if steps_per_measurement < 1:
            raise ConfigurationError("steps_per_measurement must be at least 1")
        self.grid = grid
        self.noise = noise
        self.stepper = HybridStepper(grid, dt, event_tol, max_bisections, reset_map)
        self.n_sub = int(steps_per_measurement)
        self.reset_map = reset_map
        self.oracle_schedule = None if oracle_schedule is None else list(oracle_schedule)
        self.jumps: list[JumpLog] = []

    @property
    def interval(self) -> float:
        return self.stepper.dt * self.n_sub

    def _jump(self, P, hit, trigger):
        rec = hit.record
        salt = event_saltation(hit.mode_minus, hit.x_minus, hit.x_plus, rec.t_s, rec.guard, self.grid,
                               hit.params_minus, hit.params_plus, self.reset_map)
        n2 = hit.x_plus.size
        self.jumps.append(JumpLog(rec.t_s, hit.mode_minus, hit.mode_minus.other, rec.guard, salt.alpha,
                                  salt.fallback, trigger, rec))
        return covariance_jump(P, salt.Xi, self.noise.W_R(hit.mode_minus.other, n2))

    def predict(self, b: EstimatorBelief) -> EstimatorBelief:
        state = HybridState(b.mode, b.x_hat, b.params, b.dwell_clock)
        try:
            res = self.stepper.advance(state, b.t, self.n_sub, forced=self.oracle_schedule)
        except HybridInverterError as exc:
            raise FilterDivergenceError(f"prediction failed at t={b.t!r}: {exc}") from exc
        P = b.P
        for i, piece in enumerate(res.pieces):
            F = piece_jacobian(piece, self.stepper)
            P = F @ P @ F.T
            if i < len(res.events):
                P = self._jump(_symmetrize(P), res.events[i], "prediction")
        out = res.state
        P = _symmetrize(P + self.noise.Q_discrete(out.mode, out.x.size, self.interval))
        nb = EstimatorBelief(out.mode, out.x, P, out.params, b.t + self.interval, out.dwell_clock)
        _check_finite(nb, "prediction")
        return nb

    def correct(self, b: EstimatorBelief, z) -> EstimatorBelief:
        kind = _kind(b.mode)
        Pp = self.stepper.packed(b.params)
        z_pred, H = measurement_jacobian(kind, b.x_hat, b.t, Pp, self.stepper.G)
        x, P, nu, S = kalman_update(b.x_hat, b.P, z, z_pred, H, self.noise.Sigma)
        nb = EstimatorBelief(b.mode, x, P, b.params, b.t, b.dwell_clock, nu, nis(nu, S), S)
        _check_finite(nb, "correction")
        if self.oracle_schedule is None and nb.mode is Mode.GFL:
            nb = self._post_correction_guard(nb)
        return nb

    def _post_correction_guard(self, b: EstimatorBelief) -> EstimatorBelief:
        P_packed = self.stepper.packed(b.params)
        g = _fast.gfl_guard(b.x_hat, b.t, P_packed, self.stepper.G)
        if g < 0.0:
            return b
        sub = self.stepper.sub_guard(b.x_hat, b.t, b.params)
        x_plus, params_plus, rec = apply_reset(b.mode, b.x_hat, self.grid.sample(b.t), b.params, b.t, sub,
                                               reset_map=self.reset_map, guard_residual=g)
        hit = EventHit(rec, b.mode, b.x_hat, b.params, x_plus, params_plus, 0)
        P = self._jump(b.P, hit, "correction")
        return EstimatorBelief(b.mode.other, x_plus, P, params_plus, b.t, 0.0, b.innovation, b.nis, b.S)

    def step(self, b: EstimatorBelief, z) -> EstimatorBelief:
        return self.correct(self.predict(b), z)


class ContinuousEKF:
    """EKF on the smoothed single-model approximation (GFL coordinates, no jumps)."""

    def __init__(self, grid: GridSignal, noise: NoiseConfig, dt: float, steps_per_measurement: int,
                 k_gain: float, v_switch: float | None = None):
        if not k_gain > 0.0:
            raise ConfigurationError("k_gain must be positive")
        self.grid = grid
        self.noise = noise
        self.dt = float(dt)
        self.n_sub = int(steps_per_measurement)
        self.k_gain = float(k_gain)
        self.v_switch = v_switch
        self.G = _fast.pack_grid(grid)
        self._packed = {}

    @property
    def interval(self) -> float:
        return self.dt * self.n_sub

    def packed(self, params: InverterParams) -> np.ndarray:
        hit = self._packed.get(id(params))
        if hit is None or hit[0] is not params:
            hit = (params, _fast.pack_params(params, self.k_gain, self.v_switch))
            self._packed[id(params)] = hit
        return hit[1]

    def predict(self, b: EstimatorBelief) -> EstimatorBelief:
        Pp = self.packed(b.params)
        Y, ok = _fast.integrate_batch(_fast.KIND_CONT, b.x_hat[None, :], b.t, 0.0, self.dt, self.n_sub, 0.0,
                                      Pp, self.G)
        if not ok:
            raise FilterDivergenceError(f"non-finite smoothed-model prediction at t={b.t!r}")
        F = flow_jacobian(_fast.KIND_CONT, b.x_hat, b.t, 0.0, self.dt, self.n_sub, 0.0, Pp, self.G)
        P = _symmetrize(F @ b.P @ F.T + self.noise.Q_discrete(Mode.GFL, b.x_hat.size, self.interval))
        nb = EstimatorBelief(Mode.GFL, Y[0], P, b.params, b.t + self.interval)
        _check_finite(nb, "prediction")
        return nb

    def correct(self, b: EstimatorBelief, z) -> EstimatorBelief:
        z_pred, H = measurement_jacobian(_fast.KIND_CONT, b.x_hat, b.t, self.packed(b.params), self.G)
        x, P, nu, S = kalman_update(b.x_hat, b.P, z, z_pred, H, self.noise.Sigma)
        nb = EstimatorBelief(Mode.GFL, x, P, b.params, b.t, 0.0, nu, nis(nu, S), S)
        _check_finite(nb, "correction")
        return nb

    def step(self, b: EstimatorBelief, z) -> EstimatorBelief:
        return self.correct(self.predict(b), z)


@dataclass
class BeliefStream:
    """Filter output at the measurement times (index 0 is the prior at ``t_0``)."""

    t: np.ndarray
    mode: np.ndarray
    x_hat: np.ndarray
    P_diag: np.ndarray
    z_hat: np.ndarray
    innovation: np.ndarray
    nis: np.ndarray
    jumps: list
    model: str
    failure: str | None = None

    def nis_coverage(self, band=NIS_BAND_95_DOF4) -> float:
        vals = self.nis[np.isfinite(self.nis)]
        if vals.size == 0:
            return math.nan
        return float(np.mean((vals >= band[0]) & (vals <= band[1])))


def _run(filt, b0: EstimatorBelief, z_stream, model: str, estimate_rows, strict: bool) -> BeliefStream:
    z_stream = np.atleast_2d(np.asarray(z_stream, dtype=float))
    K = z_stream.shape[0]
    t = np.full(K + 1, np.nan)
    mode = np.zeros(K + 1, dtype=np.int8)
    X = np.full((K + 1, MAX_STATE_DIM), np.nan)
    Pd = np.full((K + 1, MAX_STATE_DIM), np.nan)
    Zh = np.full((K + 1, 4), np.nan)
    nu = np.full((K + 1, 4), np.nan)
    nis_v = np.full(K + 1, np.nan)
    b = b0.copy()

    def store(j, belief):
        n = belief.x_hat.size
        t[j] = belief.t
        mode[j] = CONTINUOUS_CODE if model == "continuous" else MODE_CODES[belief.mode]
        X[j, :n] = belief.x_hat
        Pd[j, :n] = np.diag(belief.P)
        Zh[j] = estimate_rows(belief)
        if belief.innovation is not None:
            nu[j] = belief.innovation
            nis_v[j] = belief.nis

    store(0, b)
    failure = None
    last = K
    for k in range(K):
        try:
            b = filt.step(b, z_stream[k])
        except HybridInverterError as exc:
            if strict:
                raise
            failure, last = f"{type(exc).__name__}: {exc}", k
            break
        store(k + 1, b)
    m = last + 1
    return BeliefStream(t[:m], mode[:m], X[:m], Pd[:m], Zh[:m], nu[:m], nis_v[:m],
                        list(getattr(filt, "jumps", [])), model, failure)


def run_hybrid_ekf(z_stream, b0: EstimatorBelief, grid: GridSignal, noise: NoiseConfig, dt: float,
                   steps_per_measurement: int, event_tol: float = 1e-12, max_bisections: int = 30,
                   reset_map: bool = True, oracle_schedule: Sequence | None = None,
                   strict: bool = False) -> BeliefStream:
    """Filter a measurement stream sampled every ``dt * steps_per_measurement`` after ``b0.t``."""
    filt = HybridEKF(grid, noise, dt, steps_per_measurement, event_tol, max_bisections, reset_map,
                     oracle_schedule)

    def rows(belief):
        return measurement_rows(_kind(belief.mode), belief.x_hat, belief.t,
                                filt.stepper.packed(belief.params), filt.stepper.G)[0]
    return _run(filt, b0, z_stream, "hybrid", rows, strict)


def run_continuous_ekf(z_stream, b0: EstimatorBelief, grid: GridSignal, noise: NoiseConfig, dt: float,
                       steps_per_measurement: int, k_gain: float = 200.0, v_switch: float | None = None,
                       strict: bool = False) -> BeliefStream:
    """Standard EKF on the smoothed GFL-coordinate model; no jumps, no saltation."""
    if b0.x_hat.size != state_dim(Mode.GFL, b0.params):
        raise ConfigurationError("the smoothed model runs on GFL coordinates")
    filt = ContinuousEKF(grid, noise, dt, steps_per_measurement, k_gain, v_switch)

    def rows(belief):
        return measurement_rows(_fast.KIND_CONT, belief.x_hat, belief.t, filt.packed(belief.params), filt.G)[0]
    return _run(filt, b0, z_stream, "continuous", rows, strict)


def predict(b: EstimatorBelief, grid: GridSignal, noise: NoiseConfig, dt: float, n_steps: int = 1,
            reset_map: bool = True) -> EstimatorBelief:
    """One hybrid prediction over ``n_steps`` integration steps."""
    return HybridEKF(grid, noise, dt, n_steps, reset_map=reset_map).predict(b)


def correct(b: EstimatorBelief, z, grid: GridSignal, noise: NoiseConfig, check_guard: bool = True) -> EstimatorBelief:
    """One Joseph-form correction of a hybrid belief."""
    filt = HybridEKF(grid, noise, 1.0, 1, oracle_schedule=None if check_guard else [])
    return filt.correct(b, z)


def apply_jump(b: EstimatorBelief, grid: GridSignal, t_s: float, sub_guard: str, noise: NoiseConfig,
               reset_map: bool = True):
    """Reset the estimate and carry the covariance through a switch at ``t_s``.

    Returns the post-switch belief and the saltation matrix used.
    """
    x_plus, params_plus, rec = apply_reset(b.mode, b.x_hat, grid.sample(t_s), b.params, t_s, sub_guard,
                                           reset_map=reset_map)
    salt = event_saltation(b.mode, b.x_hat, x_plus, t_s, sub_guard, grid, b.params, params_plus, reset_map)
    P = covariance_jump(b.P, salt.Xi, noise.W_R(b.mode.other, x_plus.size))
    return EstimatorBelief(b.mode.other, x_plus, P, params_plus, t_s, 0.0), salt


@dataclass
class HybridModel:
    """A hybrid system given by plain callables, for :class:`ModelHybridEKF`.

    ``fields[m](x, t)`` is the flow and ``measure[m](x, t)`` the measurement
    map of mode ``m``.  A mode with an entry in ``guards`` switches to
    ``successor[m]`` through ``resets[m](x, t)`` once its guard becomes
    non-negative.  Modes are arbitrary hashable labels.
    """

    fields: dict
    measure: dict
    guards: dict = field(default_factory=dict)
    resets: dict = field(default_factory=dict)
    successor: dict = field(default_factory=dict)


def _fd_jacobian(fn: Callable, x, h: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros(x.size)
        e[j] = h
        cols.append((np.atleast_1d(fn(x + e)) - np.atleast_1d(fn(x - e))) / (2.0 * h))
    return np.column_stack(cols)


class ModelHybridEKF:
    """The hybrid EKF recursion on an arbitrary :class:`HybridModel`.

    Same conventions as :class:`HybridEKF`: RK4 prediction over
    ``steps_per_measurement`` steps with guard monitoring, finite-difference
    flow Jacobians per reset-free piece, saltation jumps between pieces,
    ``Q * interval`` added at the end, then a Joseph-form correction.
    """

    def __init__(self, model: HybridModel, Q: dict, Sigma, dt: float, steps_per_measurement: int,
                 W_R: dict | None = None, jacobian_step: float = JACOBIAN_STEP, event_tol: float = 1e-12,
                 max_bisections: int = 30):
        if steps_per_measurement < 1:
            raise ConfigurationError("steps_per_measurement must be at least 1")
        self.model = model
        self.Q = {m: np.asarray(v, dtype=float) for m, v in Q.items()}
        self.Sigma = np.asarray(Sigma, dtype=float)
        self.W_R = W_R or {}
        self.dt = float(dt)
        self.n_sub = int(steps_per_measurement)
        self.h = float(jacobian_step)
        self.event_tol = event_tol
        self.max_bisections = max_bisections
        self.jumps: list[JumpLog] = []

    @property
    def interval(self) -> float:
        return self.dt * self.n_sub

    def _compose(self, mode, x, t0: float, steps: list):
        f = self.model.fields[mode]
        t = t0
        for h in steps:
            if h > 0.0:
                x = step_rk4(x, t, h, f)
            t += h
        return x

    def _flow_jacobian(self, mode, x, t0, steps):
        return _fd_jacobian(lambda y: self._compose(mode, y, t0, steps), x, self.h)

    def _saltation(self, mode, x_minus, x_plus, t_s):
        m = self.model
        to = m.successor[mode]
        g, reset = m.guards[mode], m.resets[mode]
        DR = _fd_jacobian(lambda y: reset(y, t_s), x_minus, self.h)
        grad = _fd_jacobian(lambda y: np.array([g(y, t_s)]), x_minus, self.h)[0]
        tau = 1e-7
        dg_dt = (g(x_minus, t_s + tau) - g(x_minus, t_s - tau)) / (2.0 * tau)
        dR_dt = (np.asarray(reset(x_minus, t_s + tau)) - np.asarray(reset(x_minus, t_s - tau))) / (2.0 * tau)
        inp = SaltationInputs(np.asarray(m.fields[mode](x_minus, t_s)), np.asarray(m.fields[to](x_plus, t_s)),
                              DR, grad, dg_dt, dR_dt)
        return saltation_or_reset_jacobian(inp, "model", t_s)

    def predict(self, b: EstimatorBelief) -> EstimatorBelief:
        m = self.model
        mode, x, P = b.mode, np.array(b.x_hat, dtype=float), b.P
        seg_x, seg_t, steps = x.copy(), b.t, []
        for k in range(self.n_sub):
            tk = b.t + k * self.dt
            f = m.fields[mode]
            x_new = step_rk4(x, tk, self.dt, f)
            g = m.guards.get(mode)
            if g is None or g(x_new, tk + self.dt) < 0.0:
                x = x_new
                steps.append(self.dt)
                continue
            loc = locate_event(x, tk, self.dt, f, g, self.event_tol, self.max_bisections)
            steps.append(loc.t_s - tk)
            F = self._flow_jacobian(mode, seg_x, seg_t, steps)
            P = _symmetrize(F @ P @ F.T)
            to = m.successor[mode]
            x_plus = np.asarray(m.resets[mode](loc.x, loc.t_s), dtype=float)
            salt = self._saltation(mode, loc.x, x_plus, loc.t_s)
            W = self.W_R.get(to, W_R_DEFAULT * np.eye(x_plus.size))
            P = covariance_jump(P, salt.Xi, W)
            self.jumps.append(JumpLog(loc.t_s, mode, to, "model", salt.alpha, salt.fallback, "prediction"))
            rest = (tk + self.dt) - loc.t_s
            mode = to
            x = self._compose(mode, x_plus, loc.t_s, [rest])
            seg_x, seg_t, steps = x_plus.copy(), loc.t_s, [rest]
        F = self._flow_jacobian(mode, seg_x, seg_t, steps)
        P = _symmetrize(F @ P @ F.T + self.Q[mode] * self.interval)
        nb = EstimatorBelief(mode, x, P, b.params, b.t + self.interval)
        _check_finite(nb, "prediction")
        return nb

    def correct(self, b: EstimatorBelief, z) -> EstimatorBelief:
        h = self.model.measure[b.mode]
        z_pred = np.asarray(h(b.x_hat, b.t), dtype=float)
        H = _fd_jacobian(lambda y: h(y, b.t), b.x_hat, self.h)
        x, P, nu, S = kalman_update(b.x_hat, b.P, z, z_pred, H, self.Sigma)
        nb = EstimatorBelief(b.mode, x, P, b.params, b.t, 0.0, nu, nis(nu, S), S)
        _check_finite(nb, "correction")
        return nb

    def step(self, b: EstimatorBelief, z) -> EstimatorBelief:
        return self.correct(self.predict(b), z)
