"""Monte-Carlo transport of a state covariance through a located switch.

Independent of the estimator: flows are composed from single RK4 steps of
the stepper and the flow Jacobians come from central differences here.
"""

from dataclasses import dataclass

import numpy as np

from hybrid_inverter.hybrid import HybridState
from hybrid_inverter.saltation import event_saltation
from hybrid_inverter.sim import HybridStepper
from hybrid_inverter.states import Mode


def flow(stepper, mode, x, t0, t1, params, h):
    """Pre-switch flow from ``t0`` to ``t1`` in steps of at most ``h``."""
    x = np.array(x, dtype=float)
    t = t0
    while t1 - t > 1e-18:
        dt = min(h, t1 - t)
        x = stepper.step(mode, x, t, dt, params)
        t += dt
    return x


def flow_jacobian(stepper, mode, x, t0, t1, params, h, eps=1e-6):
    n = x.size
    J = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = eps
        J[:, j] = (flow(stepper, mode, x + e, t0, t1, params, h) - flow(stepper, mode, x - e, t0, t1, params, h)) / (2 * eps)
    return J


@dataclass
class TransportCheck:
    predicted: np.ndarray
    empirical: np.ndarray
    rel_error: float
    n_switched: int


def transport_check(traj, event_index, n_samples=10_000, scale=1e-4, tau=2e-6, h=1e-6, seed=0):
    """Compare ``F2 Xi F1 P F1^T Xi^T F2^T`` with rollouts through the ``event_index``-th switch."""
    ev = traj.events[event_index]
    grid = traj.grid
    t_s = ev.t_s
    t_a, t_b = t_s - tau, t_s + tau
    k = int(np.floor(t_a / (traj.t[1] - traj.t[0])))
    while traj.t[k] > t_a:
        k -= 1
    hs = traj.hybrid_state(k)
    mode, params = hs.mode, hs.params
    stepper = HybridStepper(grid, h)
    x_a = flow(stepper, mode, hs.x, traj.t[k], t_a, params, h)
    n_steps = int(round((t_b - t_a) / h))

    def start(x):
        dwell = params.T_hold - (t_s - t_a) if mode is Mode.GFM else 0.0
        return HybridState(mode, x, params, dwell)

    # nominal rollout through the switch
    nom = stepper.advance(start(x_a), t_a, n_steps)
    hit = nom.events[0]
    x_minus, x_plus, p_plus = hit.x_minus, hit.x_plus, hit.params_plus
    t_sw = hit.record.t_s

    Xi = event_saltation(mode, x_minus, x_plus, t_sw, hit.record.guard, grid, params, p_plus, strict=True).Xi
    F1 = flow_jacobian(stepper, mode, x_a, t_a, t_sw, params, h)
    F2 = flow_jacobian(stepper, mode.other, x_plus, t_sw, t_b, p_plus, h)
    P = scale**2 * np.eye(x_a.size)
    T = F2 @ Xi @ F1
    predicted = T @ P @ T.T

    rng = np.random.default_rng(seed)
    finals = []
    for dx in rng.standard_normal((n_samples, x_a.size)) * scale:
        r = stepper.advance(start(x_a + dx), t_a, n_steps)
        if len(r.events) == 1:
            finals.append(r.state.x)
    finals = np.array(finals)
    empirical = np.cov(finals.T)
    rel = np.linalg.norm(predicted - empirical) / np.linalg.norm(empirical)
    return TransportCheck(predicted, empirical, float(rel), len(finals))
