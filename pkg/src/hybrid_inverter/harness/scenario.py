"""Scenario description and its sectioned key-value file format.

A scenario file is read with :mod:`configparser`.  Every section is optional
and unknown keys are rejected::

    [scenario]
    name = sag
    t_end = 2.5                  # s
    dt = 1e-5                    # integration step, s
    measurement_interval = 1e-3  # s, a multiple of dt
    near_switch_window = 0.05    # half-width around each switch, s
    seeds = 0, 1, 2

    [grid]
    preset = sag                 # sag | constant | segments
    depth = 0.85
    # sag keys:      t_sag, depth, ramp, t_recover, recover_ramp, v_nominal, omega
    # constant keys: v_mag, omega, v_angle
    # preset = segments takes a "segments" value with one
    # "t_start v_mag [v_angle [omega [ramp]]]" line per segment

    [params]                     # any InverterParams field
    q_ref = 0.8

    [sim]
    process_noise = 1e-3         # std density per sqrt(s), all non-angle states
    event_tol = 1e-12
    max_bisections = 30
    no_reset_map = false

    [noise]
    q_scale = 1e-6               # process noise density, Q = q_scale * I
    sigma = 1e-5 4e-5 7e-5 1e-4  # measurement variances (diagonal)
    w_r_scale = 1e-8             # reset noise, W_R = w_r_scale * I

    [estimator]
    k_gain = 200                 # logistic gain of the smoothed baseline
    v_switch = 0.9               # logistic threshold (defaults to v_th_lo)
    p0_scale = 1e-4              # initial covariance p0_scale * I
    oracle_mode_signal = false
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError
from ..estimator import NoiseConfig, default_sigma
from ..grid import OMEGA_NOMINAL, GridSegment, GridSignal
from ..params import InverterParams
from ..sim import SimConfig


@dataclass
class Scenario:
    name: str = "sag"
    params: InverterParams = field(default_factory=InverterParams)
    grid: GridSignal = field(default_factory=GridSignal.sag)
    sim: SimConfig = field(default_factory=lambda: SimConfig(process_noise=1e-3))
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    measurement_interval: float = 1e-3
    near_switch_window: float = 0.05
    seeds: tuple = (0,)
    k_gain: float = 200.0
    v_switch: float | None = None
    p0_scale: float = 1e-4
    oracle_mode_signal: bool = False

    def __post_init__(self):
        if not self.near_switch_window > 0.0:
            raise ConfigurationError("near_switch_window must be positive")
        if not self.k_gain > 0.0:
            raise ConfigurationError("k_gain must be positive")
        if not self.p0_scale > 0.0:
            raise ConfigurationError("p0_scale must be positive")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        self.seeds = tuple(int(s) for s in self.seeds)
        self.steps_per_measurement  # validates the interval
        late = [t for t in self.grid.breakpoints() if t > self.sim.t_end]
        if late:
            raise ConfigurationError(f"scripted grid events after t_end: {late}")

    @property
    def steps_per_measurement(self) -> int:
        ratio = self.measurement_interval / self.sim.dt
        n = int(round(ratio))
        if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
            raise ConfigurationError(
                f"measurement_interval {self.measurement_interval!r} is not a multiple of dt {self.sim.dt!r}")
        return n

    def with_overrides(self, dt: float | None = None, t_end: float | None = None, seed: int | None = None,
                       no_reset_map: bool | None = None, oracle_mode_signal: bool | None = None) -> Scenario:
        sim_changes = {}
        if dt is not None:
            sim_changes["dt"] = float(dt)
        if t_end is not None:
            sim_changes["t_end"] = float(t_end)
        if no_reset_map is not None:
            sim_changes["no_reset_map"] = bool(no_reset_map)
        changes = {}
        if sim_changes:
            changes["sim"] = dataclasses.replace(self.sim, **sim_changes)
        if t_end is not None:
            # a shorter horizon drops scripted segments that would start after it
            changes["grid"] = self.grid.truncated(float(t_end))
        if seed is not None:
            changes["seeds"] = (int(seed),)
        if oracle_mode_signal is not None:
            changes["oracle_mode_signal"] = bool(oracle_mode_signal)
        return dataclasses.replace(self, **changes) if changes else self


_SECTIONS = {
    "scenario": {"name", "t_end", "dt", "measurement_interval", "near_switch_window", "seeds"},
    "grid": {"preset", "segments", "t_sag", "depth", "ramp", "t_recover", "recover_ramp", "v_nominal",
             "omega", "v_mag", "v_angle"},
    "params": set(InverterParams.field_names()),
    "sim": {"process_noise", "event_tol", "max_bisections", "no_reset_map"},
    "noise": {"q_scale", "sigma", "w_r_scale"},
    "estimator": {"k_gain", "v_switch", "p0_scale", "oracle_mode_signal"},
}

_BOOL = {"true": True, "yes": True, "on": True, "1": True, "false": False, "no": False, "off": False, "0": False}


def _float(section, key, text):
    try:
        value = float(text)
    except ValueError:
        raise ConfigurationError(f"[{section}] {key}: expected a number, got {text!r}") from None
    if not math.isfinite(value):
        raise ConfigurationError(f"[{section}] {key}: value must be finite")
    return value


def _bool(section, key, text):
    try:
        return _BOOL[text.strip().lower()]
    except KeyError:
        raise ConfigurationError(f"[{section}] {key}: expected a boolean, got {text!r}") from None


def _floats(section, key, text):
    return [_float(section, key, tok) for tok in text.replace(",", " ").split()]


def _param_value(key, text, current):
    if isinstance(current, bool):
        return _bool("params", key, text)
    if isinstance(current, str):
        return text.strip()
    if current is None and text.strip().lower() == "none":
        return None
    return _float("params", key, text)


def _parse_grid(sec) -> GridSignal:
    preset = sec.get("preset", "sag").strip().lower()
    values = {k: v for k, v in sec.items() if k not in ("preset", "segments")}
    if preset == "segments":
        if values:
            raise ConfigurationError(f"[grid] keys {sorted(values)} do not apply to explicit segments")
        lines = [ln.strip() for ln in sec.get("segments", "").splitlines() if ln.strip()]
        if not lines:
            raise ConfigurationError("[grid] segments preset needs at least one segment line")
        segs = []
        for ln in lines:
            nums = _floats("grid", "segments", ln)
            if not 2 <= len(nums) <= 5:
                raise ConfigurationError(f"[grid] segment line {ln!r} needs 2 to 5 numbers")
            defaults = [0.0, 0.0, 0.0, OMEGA_NOMINAL, 0.0]
            defaults[:len(nums)] = nums
            segs.append(GridSegment(*defaults))
        return GridSignal(segs)
    if "segments" in sec:
        raise ConfigurationError("[grid] segments requires preset = segments")
    kwargs = {k: _float("grid", k, v) for k, v in values.items()}
    try:
        if preset == "sag":
            return GridSignal.sag(**kwargs)
        if preset == "constant":
            return GridSignal.constant(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"[grid] {exc}") from None
    raise ConfigurationError(f"[grid] unknown preset {preset!r}")


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed scenario file {source}: {exc}") from None
    for name in cp.sections():
        allowed = _SECTIONS.get(name)
        if allowed is None:
            raise ConfigurationError(f"{source}: unknown section [{name}]")
        extra = set(cp[name]) - allowed
        if extra:
            raise ConfigurationError(f"{source}: unknown keys in [{name}]: {sorted(extra)}")

    def sec(name):
        return cp[name] if cp.has_section(name) else {}

    s = sec("scenario")
    name = s.get("name", "scenario").strip()
    measurement_interval = _float("scenario", "measurement_interval", s.get("measurement_interval", "1e-3"))
    window = _float("scenario", "near_switch_window", s.get("near_switch_window", "0.05"))
    seeds = tuple(int(tok) for tok in s.get("seeds", "0").replace(",", " ").split())

    defaults = InverterParams()
    overrides = {k: _param_value(k, v, getattr(defaults, k)) for k, v in sec("params").items()}
    try:
        params = defaults.replace(**overrides) if overrides else defaults
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"[params] {exc}") from None

    grid = _parse_grid(sec("grid")) if cp.has_section("grid") else GridSignal.sag()

    m = sec("sim")
    sim = SimConfig(
        dt=_float("scenario", "dt", s.get("dt", "1e-5")),
        t_end=_float("scenario", "t_end", s.get("t_end", "2.5")),
        event_tol=_float("sim", "event_tol", m.get("event_tol", "1e-12")),
        max_bisections=int(_float("sim", "max_bisections", m.get("max_bisections", "30"))),
        process_noise=_float("sim", "process_noise", m.get("process_noise", "1e-3")),
        no_reset_map=_bool("sim", "no_reset_map", m.get("no_reset_map", "false")),
    )

    n = sec("noise")
    sigma = default_sigma()
    if "sigma" in n:
        diag = _floats("noise", "sigma", n["sigma"])
        if len(diag) != 4:
            raise ConfigurationError("[noise] sigma needs four variances")
        sigma = np.diag(diag)
    noise = NoiseConfig(q_scale=_float("noise", "q_scale", n.get("q_scale", "1e-6")), Sigma=sigma,
                        w_r_scale=_float("noise", "w_r_scale", n.get("w_r_scale", "1e-8")))

    e = sec("estimator")
    v_switch = e.get("v_switch")
    return Scenario(
        name=name, params=params, grid=grid, sim=sim, noise=noise,
        measurement_interval=measurement_interval, near_switch_window=window, seeds=seeds,
        k_gain=_float("estimator", "k_gain", e.get("k_gain", "200")),
        v_switch=None if v_switch is None else _float("estimator", "v_switch", v_switch),
        p0_scale=_float("estimator", "p0_scale", e.get("p0_scale", "1e-4")),
        oracle_mode_signal=_bool("estimator", "oracle_mode_signal", e.get("oracle_mode_signal", "false")),
    )


def load_scenario(path) -> Scenario:
    """Read a scenario file; a bare name such as ``sag`` resolves to a shipped scenario."""
    p = Path(path)
    if not p.exists() and p.suffix in ("", ".cfg") and p.parent == Path("."):
        stem = p.stem
        shipped = resources.files(__package__).joinpath("scenarios").joinpath(f"{stem}.cfg")
        if shipped.is_file():
            return parse_scenario(shipped.read_text(), source=str(shipped))
    if not p.is_file():
        raise ConfigurationError(f"scenario file not found: {p}")
    return parse_scenario(p.read_text(), source=str(p))


def shipped_scenarios() -> list[str]:
    root = resources.files(__package__).joinpath("scenarios")
    return sorted(f.name[:-4] for f in root.iterdir() if f.name.endswith(".cfg"))
