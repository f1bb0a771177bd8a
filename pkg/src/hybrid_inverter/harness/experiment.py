"""Truth and measurement generation, both estimators, and the comparison metrics."""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import HybridInverterError, StepFailure
from ..estimator import (
    NIS_BAND_95_DOF4, BeliefStream, EstimatorBelief, run_continuous_ekf, run_hybrid_ekf,
)
from ..hybrid import HybridState
from ..sim import Trajectory, equilibrium_gfl, simulate_hybrid
from ..states import MEASUREMENT_CHANNELS, Mode
from .scenario import Scenario

MODELS = ("hybrid", "continuous")


@dataclass
class RmseResult:
    overall: dict
    near: dict | None
    n_overall: int
    n_near: int


def compute_rmse(truth, estimate, t, event_times: Sequence[float], window: float,
                 channels: Sequence[str] = MEASUREMENT_CHANNELS) -> RmseResult:
    """Per-channel RMSE over all samples and over the union of ``[t_s - w, t_s + w]``.

    ``truth`` and ``estimate`` are ``(N, C)`` arrays on the common times ``t``.
    Without events the near-switch entry is ``None`` (absent, not zero).
    """
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    estimate = np.atleast_2d(np.asarray(estimate, dtype=float))
    t = np.asarray(t, dtype=float)
    if truth.shape != estimate.shape or truth.shape[0] != t.size:
        raise ValueError(f"misaligned series: truth {truth.shape}, estimate {estimate.shape}, t {t.shape}")
    if truth.shape[1] != len(channels):
        raise ValueError("channel names do not match the series width")
    err = estimate - truth

    def rms(mask):
        return {c: float(np.sqrt(np.mean(err[mask, j] ** 2))) for j, c in enumerate(channels)}

    everything = np.ones(t.size, dtype=bool)
    overall = rms(everything) if t.size else {c: math.nan for c in channels}
    near_mask = np.zeros(t.size, dtype=bool)
    for ts in event_times:
        near_mask |= np.abs(t - ts) <= window
    near = rms(near_mask) if (len(event_times) and near_mask.any()) else None
    return RmseResult(overall, near, int(t.size), int(near_mask.sum()))


def post_switch_peaks(traj: Trajectory, window: float | None = None) -> list[float]:
    """Largest ``|i|`` after each of the run's own switches.

    The interval after a switch runs to the next switch (or the end of the
    run); ``window`` caps its length when given.
    """
    mag = traj.current_magnitude()
    times = [ev.t_s for ev in traj.events]
    peaks = []
    for j, ts in enumerate(times):
        stop = times[j + 1] if j + 1 < len(times) else traj.t[-1]
        if window is not None:
            stop = min(stop, ts + window)
        mask = (traj.t >= ts) & (traj.t <= stop)
        peaks.append(float(np.max(mag[mask])) if mask.any() else math.nan)
    return peaks


def peak_current_after_switches(traj: Trajectory, window: float | None = None) -> float:
    """Largest ``|i|`` over all post-switch intervals (NaN without switches)."""
    peaks = post_switch_peaks(traj, window)
    return max(peaks) if peaks else math.nan


@dataclass
class MetricsReport:
    rmse: dict = field(default_factory=dict)
    nis_coverage: dict = field(default_factory=dict)
    nis_mean: dict = field(default_factory=dict)
    event_timing: list = field(default_factory=list)
    peak_current: dict = field(default_factory=dict)
    peak_current_ratio: float | None = None
    failures: dict = field(default_factory=dict)

    def rows(self) -> list[tuple]:
        """Flat ``(metric, model, channel, value)`` rows in a fixed order."""
        out = []
        for model in sorted(self.rmse):
            res = self.rmse[model]
            for c, v in res.overall.items():
                out.append(("rmse_overall", model, c, v))
            if res.near is not None:
                for c, v in res.near.items():
                    out.append(("rmse_near_switch", model, c, v))
            out.append(("samples_overall", model, "", res.n_overall))
            out.append(("samples_near_switch", model, "", res.n_near))
        for model in sorted(self.nis_coverage):
            out.append(("nis_coverage", model, "", self.nis_coverage[model]))
            out.append(("nis_mean", model, "", self.nis_mean[model]))
        if "hybrid" in self.rmse and "continuous" in self.rmse:
            h, c = self.rmse["hybrid"], self.rmse["continuous"]
            for ch in h.overall:
                out.append(("rmse_ratio_overall", "continuous/hybrid", ch, _ratio(c.overall[ch], h.overall[ch])))
            if h.near is not None and c.near is not None:
                for ch in h.near:
                    out.append(("rmse_ratio_near_switch", "continuous/hybrid", ch, _ratio(c.near[ch], h.near[ch])))
        for k, item in enumerate(self.event_timing):
            out.append(("event_timing_error", "hybrid", f"{k}:{item['from_mode']}->{item['to_mode']}",
                        item["error"]))
        for label in sorted(self.peak_current):
            out.append(("peak_current", label, "", self.peak_current[label]))
        if self.peak_current_ratio is not None:
            out.append(("peak_current_ratio", "no_reset/reset", "", self.peak_current_ratio))
        return out


def _ratio(a, b):
    return a / b if b > 0.0 else math.inf


@dataclass
class ExperimentResult:
    scenario: Scenario
    seed: int
    truth: Trajectory
    meas_t: np.ndarray
    meas: np.ndarray
    truth_z: np.ndarray
    streams: dict
    metrics: MetricsReport


def initial_state(scn: Scenario) -> HybridState:
    """Locked GFL operating point at the initial grid sample."""
    s = scn.grid.sample(0.0)
    return HybridState(Mode.GFL, equilibrium_gfl(scn.params, float(s.v_mag), float(s.theta)), scn.params)


def generate_truth(scn: Scenario, seed: int, x0: HybridState | None = None) -> Trajectory:
    cfg = dataclasses.replace(scn.sim, seed=int(seed))
    traj = simulate_hybrid(x0 or initial_state(scn), scn.grid, None, cfg)
    return traj


def generate_measurements(truth: Trajectory, scn: Scenario, seed: int):
    """Noisy samples every measurement interval after ``t_0``.

    Returns ``(t, z, z_true, index)`` where ``index`` selects the truth
    samples.  Measurement noise uses its own stream derived from ``seed``.
    """
    n_sub = scn.steps_per_measurement
    index = np.arange(n_sub, truth.t.size, n_sub)
    z_true = truth.measurements()[index]
    rng = np.random.default_rng([int(seed), 1])
    chol = np.linalg.cholesky(scn.noise.Sigma)
    z = z_true + rng.standard_normal(z_true.shape) @ chol.T
    return truth.t[index], z, z_true, index


def _prior(scn: Scenario, x0: HybridState) -> EstimatorBelief:
    n = x0.x.size
    return EstimatorBelief(x0.mode, x0.x.copy(), scn.p0_scale * np.eye(n), x0.params, 0.0)


def run_estimator(model: str, scn: Scenario, z, x0: HybridState, truth: Trajectory | None = None) -> BeliefStream:
    b0 = _prior(scn, x0)
    dt, n_sub = scn.sim.dt, scn.steps_per_measurement
    if model == "hybrid":
        schedule = None
        if scn.oracle_mode_signal:
            if truth is None:
                raise ValueError("the oracle mode signal needs the truth trajectory")
            schedule = [(e.t_s, e.from_mode, e.guard) for e in truth.events]
        return run_hybrid_ekf(z, b0, scn.grid, scn.noise, dt, n_sub, scn.sim.event_tol, scn.sim.max_bisections,
                              reset_map=not scn.sim.no_reset_map, oracle_schedule=schedule)
    if model == "continuous":
        return run_continuous_ekf(z, b0, scn.grid, scn.noise, dt, n_sub, scn.k_gain, scn.v_switch)
    raise ValueError(f"unknown model {model!r}")


def _event_timing(truth: Trajectory, stream: BeliefStream) -> list:
    out = []
    used = set()
    for ev in truth.events:
        best = None
        for j, jump in enumerate(stream.jumps):
            if j in used or jump.from_mode is not ev.from_mode:
                continue
            if best is None or abs(jump.t_s - ev.t_s) < abs(stream.jumps[best].t_s - ev.t_s):
                best = j
        if best is not None:
            used.add(best)
            out.append(dict(from_mode=ev.from_mode.value, to_mode=ev.to_mode.value, t_true=ev.t_s,
                            t_est=stream.jumps[best].t_s, error=stream.jumps[best].t_s - ev.t_s))
        else:
            out.append(dict(from_mode=ev.from_mode.value, to_mode=ev.to_mode.value, t_true=ev.t_s,
                            t_est=math.nan, error=math.nan))
    return out


def evaluate_streams(scn: Scenario, truth: Trajectory, meas_t, z_true, streams: dict) -> MetricsReport:
    report = MetricsReport()
    event_times = [e.t_s for e in truth.events]
    for model, stream in streams.items():
        # skip the prior at t_0; align posterior samples with measurement times
        m = len(stream.t) - 1
        report.rmse[model] = compute_rmse(z_true[:m], stream.z_hat[1:m + 1], meas_t[:m], event_times,
                                          scn.near_switch_window)
        report.nis_coverage[model] = stream.nis_coverage(NIS_BAND_95_DOF4)
        vals = stream.nis[np.isfinite(stream.nis)]
        report.nis_mean[model] = float(np.mean(vals)) if vals.size else math.nan
        if stream.failure:
            report.failures[model] = stream.failure
        if model == "hybrid":
            report.event_timing = _event_timing(truth, stream)
    return report


def run_experiment(scn: Scenario, seed: int | None = None, models: Sequence[str] = MODELS) -> ExperimentResult:
    """Truth with process noise, one measurement stream, every requested estimator on it."""
    seed = scn.seeds[0] if seed is None else int(seed)
    try:
        x0 = initial_state(scn)
        truth = generate_truth(scn, seed, x0)
        if truth.failure:
            raise StepFailure(f"truth simulation failed: {truth.failure}")
        meas_t, z, z_true, _ = generate_measurements(truth, scn, seed)
        streams = {m: run_estimator(m, scn, z, x0, truth) for m in models}
    except HybridInverterError as exc:
        # keep the original type and attributes, prefix the message with the context
        exc.args = (f"scenario {scn.name!r}, seed {seed}: {exc}",)
        exc.scenario, exc.seed = scn.name, seed
        raise
    metrics = evaluate_streams(scn, truth, meas_t, z_true, streams)
    return ExperimentResult(scn, seed, truth, meas_t, z, z_true, streams, metrics)


@dataclass
class AblationResult:
    scenario: Scenario
    seed: int
    reset: Trajectory
    no_reset: Trajectory
    metrics: MetricsReport


def run_ablation(scn: Scenario, seed: int | None = None, window: float | None = None) -> AblationResult:
    """Truth runs with and without the reset maps; peak post-switch currents and their ratio.

    Peaks are taken over each post-switch interval (see :func:`post_switch_peaks`);
    the per-switch values are reported alongside the overall ratio.
    """
    seed = scn.seeds[0] if seed is None else int(seed)
    x0 = initial_state(scn)
    with_map = dataclasses.replace(scn, sim=dataclasses.replace(scn.sim, no_reset_map=False))
    without = dataclasses.replace(scn, sim=dataclasses.replace(scn.sim, no_reset_map=True))
    a = generate_truth(with_map, seed, x0)
    b = generate_truth(without, seed, x0)
    report = MetricsReport()
    for label, traj in (("reset", a), ("no_reset", b)):
        peaks = post_switch_peaks(traj, window)
        report.peak_current[label] = max(peaks) if peaks else math.nan
        for k, value in enumerate(peaks):
            report.peak_current[f"{label}:switch_{k}"] = value
        if traj.failure:
            report.failures[label] = traj.failure
    pa, pb = report.peak_current["reset"], report.peak_current["no_reset"]
    report.peak_current_ratio = pb / pa if (pa > 0.0 and math.isfinite(pb)) else math.nan
    return AblationResult(scn, seed, a, b, report)


def _sweep_one(args):
    scn, seed = args
    return seed, run_experiment(scn, seed).metrics


def seed_sweep(scn: Scenario, seeds: Sequence[int] | None = None, workers: int | None = None) -> dict:
    """Metrics for several seeds, run in separate processes."""
    seeds = list(scn.seeds if seeds is None else seeds)
    if workers == 1 or len(seeds) == 1:
        return dict(_sweep_one((scn, s)) for s in seeds)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return dict(pool.map(_sweep_one, [(scn, s) for s in seeds]))
