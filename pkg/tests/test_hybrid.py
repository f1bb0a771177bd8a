import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import nominal_sample
from hybrid_inverter.dynamics import eval_gfl, eval_gfm
from hybrid_inverter.grid import GridSample, GridSegment, GridSignal
from hybrid_inverter.hybrid import (
    DWELL, FREQUENCY, VOLTAGE, HybridState, apply_reset, guard_gfl_to_gfm, guard_gfm_to_gfl,
    reset_gfl_to_gfm, reset_gfm_to_gfl, virtual_impedance_activation,
)
from hybrid_inverter.params import InverterParams
from hybrid_inverter.sim import HybridStepper, SimConfig, equilibrium_gfl, simulate_hybrid
from hybrid_inverter.states import ETA_PLL, THETA, THETA_PLL, XI_D, XI_Q, Mode

unit = st.floats(-1.0, 1.0, allow_nan=False)


def gfl_state(v):
    x = np.array(v, dtype=float)
    x[2:4] *= 1.5
    return x


class TestGuards:
    def test_nominal_inside_band(self, params):
        g = guard_gfl_to_gfm(equilibrium_gfl(params), nominal_sample(params), params)
        assert g.residual < 0.0

    def test_lower_band_edge_is_zero(self, params):
        x = np.zeros(8)  # PLL locked to a zero-angle grid, eta = 0
        g = guard_gfl_to_gfm(x, GridSample(0.90, 0.0, params.omega_0, 0.0), params)
        assert g.residual == 0.0 and g.sub_guard == VOLTAGE

    def test_frequency_sub_guard(self, params):
        x = np.zeros(8)
        x[ETA_PLL] = 2 * math.pi * 0.06
        g = guard_gfl_to_gfm(x, nominal_sample(params), params)
        assert g.residual > 0.0 and g.sub_guard == FREQUENCY
        assert g.residual == pytest.approx(2 * math.pi * 0.01, rel=1e-12)

    def test_negative_frequency_deviation(self, params):
        x = np.zeros(8)
        x[ETA_PLL] = -2 * math.pi * 0.06
        assert guard_gfl_to_gfm(x, nominal_sample(params), params).residual > 0.0

    def test_dwell_boundary(self, params):
        x = np.zeros(7)
        x[XI_D] = 0.0
        s = nominal_sample(params)
        assert guard_gfm_to_gfl(x, s, params, params.T_hold).residual >= 0.0
        assert guard_gfm_to_gfl(x, s, params, 0.5 * params.T_hold).residual < 0.0

    def test_dwell_blocked_outside_band(self, params):
        s = GridSample(0.85, 0.0, params.omega_0, 0.0)
        g = guard_gfm_to_gfl(np.zeros(7), s, params, 10.0)
        assert g.residual < 0.0 and g.sub_guard == DWELL


class TestActivation:
    def test_table_thresholds(self, params):
        assert virtual_impedance_activation(0.40, params) == 0.0
        assert virtual_impedance_activation(1.20, params) == 1.0
        assert virtual_impedance_activation(0.80, params) == 0.5

    def test_saturation(self, params):
        assert virtual_impedance_activation(0.0, params) == 0.0
        assert virtual_impedance_activation(5.0, params) == 1.0

    @given(st.floats(0.0, 2.0), st.floats(0.0, 2.0))
    def test_nondecreasing(self, a, b):
        p = InverterParams()
        lo, hi = sorted((a, b))
        assert virtual_impedance_activation(lo, p) <= virtual_impedance_activation(hi, p)

    def test_continuous_at_kinks(self, params):
        for c in (params.i_th, params.i_max):
            assert abs(virtual_impedance_activation(c + 1e-12, params)
                       - virtual_impedance_activation(c - 1e-12, params)) < 1e-11


class TestGflToGfm:
    def test_locked_pll_keeps_power_as_bias(self, params):
        x = np.zeros(8)
        x[2], x[3] = 0.5, -0.2
        _, out = eval_gfl(x, nominal_sample(params), params)
        assert out.omega == params.omega_0
        _, _, rec = reset_gfl_to_gfm(x, nominal_sample(params), params)
        assert rec.p_0_plus == rec.p_s
        # |v_grid| = v_0, so the reactive bias is the sampled reactive power
        assert rec.q_0_plus == rec.q_s

    def test_hand_example(self, params):
        x = np.zeros(8)
        x[2] = 0.3
        s = nominal_sample(params)
        _, out = eval_gfl(x, s, params)
        # choose eta so that omega = omega_0 - 0.02 and read p_s off the record
        x[ETA_PLL] = -0.02
        _, _, rec = reset_gfl_to_gfm(x, s, params)
        assert rec.omega_minus == pytest.approx(params.omega_0 - 0.02, abs=1e-13)
        assert rec.p_0_plus == pytest.approx(rec.p_s - 0.02 / 0.02, abs=1e-12)
        # the literal numbers: p_s = 0.6 gives -0.4
        assert 0.6 - (params.omega_0 - (params.omega_0 - 0.02)) / params.m_p == pytest.approx(-0.4, abs=1e-12)

    @given(st.lists(unit, min_size=8, max_size=8), st.floats(0.5, 1.2), st.floats(-math.pi, math.pi))
    def test_droop_inversion(self, v, v_mag, theta_g):
        p = InverterParams()
        s = GridSample(v_mag, theta_g, p.omega_0, 0.0)
        _, params_plus, rec = reset_gfl_to_gfm(gfl_state(v), s, p)
        assert abs(p.omega_0 - p.m_p * (rec.p_s - rec.p_0_plus) - rec.omega_minus) <= 1e-12 * p.omega_0
        assert abs(p.v_0 - p.n_q * (rec.q_s - rec.q_0_plus) - rec.v_grid_minus) <= 1e-12
        assert params_plus.p_0 == rec.p_0_plus and params_plus.q_0 == rec.q_0_plus

    @given(st.lists(unit, min_size=8, max_size=8), st.floats(0.5, 1.2), st.floats(-math.pi, math.pi))
    def test_bumpless_transfer(self, v, v_mag, theta_g):
        p = InverterParams()
        s = GridSample(v_mag, theta_g, p.omega_0, 0.0)
        x = gfl_state(v)
        _, out_minus = eval_gfl(x, s, p)
        x_plus, params_plus, rec = reset_gfl_to_gfm(x, s, p)
        _, out_plus = eval_gfm(x_plus, s, params_plus)
        assert np.array_equal(x_plus[:4], x[:4])
        assert x_plus[THETA] == x[THETA_PLL]
        for a, b in ((out_plus.i_d_ref, out_minus.i_d_ref), (out_plus.i_q_ref, out_minus.i_q_ref)):
            assert a == pytest.approx(b, rel=1e-10, abs=1e-10)
        assert out_plus.omega == pytest.approx(out_minus.omega, rel=1e-13)
        assert out_plus.v_ref == pytest.approx(v_mag, abs=1e-10)

    def test_virtual_impedance(self, params):
        x = np.zeros(8)
        x[2] = 0.8
        _, pp, rec = reset_gfl_to_gfm(x, nominal_sample(params), params)
        assert rec.psi == 0.5
        assert pp.r_line == pytest.approx(params.r_f + params.r_g + 0.5 * params.r_vi)
        assert pp.l_line == pytest.approx(params.l_f + params.l_g + 0.5 * params.l_vi)

    def test_ablation_map(self, params):
        x = equilibrium_gfl(params) + 0.1
        x_plus, pp, rec = reset_gfl_to_gfm(x, nominal_sample(params), params, reset_map=False)
        assert np.array_equal(x_plus[:4], x[:4])
        assert np.all(x_plus[4:] == 0.0)
        assert pp is params and not rec.reset_map


class TestGfmToGfl:
    def test_nominal_reentry(self, params):
        x = np.zeros(7)
        s = nominal_sample(params)
        _, out = eval_gfm(x, s, params)
        # pick theta = 0 on a zero-angle grid (v_q = 0) and force omega_0 via the bias
        pp = params.replace(p_0=out.p)
        x_plus, _, rec = reset_gfm_to_gfl(x, s, pp)
        assert rec.omega_minus == pytest.approx(params.omega_0, abs=1e-12)
        assert x_plus[ETA_PLL] == pytest.approx(0.0, abs=1e-12)

    @given(st.lists(unit, min_size=7, max_size=7), st.floats(0.5, 1.2), st.floats(-math.pi, math.pi))
    def test_continuity(self, v, v_mag, theta_g):
        p = InverterParams().replace(p_0=0.3, q_0=0.6, r_eff=2.0, l_eff=0.05)
        s = GridSample(v_mag, theta_g, p.omega_0, 0.0)
        x = np.array(v)
        x_plus, pp, rec = reset_gfm_to_gfl(x, s, p)
        assert rec.theta_plus == rec.theta_minus
        assert abs(rec.omega_plus - rec.omega_minus) <= 1e-12
        assert pp.r_eff is None and pp.l_eff is None
        _, out_minus = eval_gfm(x, s, p)
        _, out_plus = eval_gfl(x_plus, s, pp)
        assert out_plus.i_d_ref == pytest.approx(out_minus.i_d_ref, rel=1e-10, abs=1e-10)
        assert out_plus.i_q_ref == pytest.approx(out_minus.i_q_ref, rel=1e-10, abs=1e-10)

    def test_round_trip_keeps_shared_states(self, params):
        x = equilibrium_gfl(params)
        s = nominal_sample(params)
        xm, pm, _ = reset_gfl_to_gfm(x, s, params)
        xl, pl, _ = reset_gfm_to_gfl(xm, s, pm)
        assert np.max(np.abs(xl[:4] - x[:4])) <= 1e-12
        assert xl[THETA_PLL] == x[THETA_PLL]
        assert pl.r_eff is None and pl.l_eff is None


def _hybrid(grid, t_end=2.5, **kw):
    p = InverterParams()
    return simulate_hybrid(equilibrium_gfl(p), grid, p, SimConfig(t_end=t_end, **kw))


class TestScenarios:
    def test_quiescent_grid(self):
        tr = _hybrid(GridSignal.constant(), t_end=0.3)
        assert tr.events == [] and np.all(tr.mode == 0)

    def test_sag_event_pair(self, sag_truth):
        ev = sag_truth.events
        assert [(e.from_mode, e.guard) for e in ev] == [(Mode.GFL, VOLTAGE), (Mode.GFM, DWELL)]
        # linear ramp from 1.0 to 0.85 over 10 ms crosses 0.90 at 2/3 of it
        assert ev[0].t_s == pytest.approx(0.5 + 0.01 * (0.1 / 0.15), abs=1e-9)
        # back in band on the recovery ramp, then T_hold of dwell
        t_in = 1.5 + 0.01 * (0.05 / 0.15)
        assert ev[1].t_s == pytest.approx(t_in + 0.2, abs=2e-5)

    def test_brief_recovery_never_returns(self):
        grid = GridSignal([
            GridSegment(0.0, 1.0), GridSegment(0.5, 0.85, ramp=0.01), GridSegment(0.8, 1.0, ramp=0.01),
            GridSegment(0.9, 0.85, ramp=0.01),
        ])
        tr = _hybrid(grid, t_end=1.5)
        assert [e.from_mode for e in tr.events] == [Mode.GFL]

    def test_dwell_clock_resets(self, params):
        grid = GridSignal([
            GridSegment(0.0, 0.85), GridSegment(0.1, 1.0, ramp=0.005), GridSegment(0.2, 0.85, ramp=0.005),
        ])
        stepper = HybridStepper(grid, 1e-5)
        x0 = np.zeros(7)
        eq = equilibrium_gfl(params)
        x0, pm, _ = reset_gfl_to_gfm(eq, grid.sample(0.0), params)
        st0 = HybridState(Mode.GFM, x0, pm)
        r1 = stepper.advance(st0, 0.0, 15000)          # to t = 0.15, in band since 0.1
        assert r1.events == []
        assert 0.0 < r1.state.dwell_clock <= 0.05 + 1e-5
        r2 = stepper.advance(r1.state, 0.15, 10000)    # to t = 0.25, out of band soon after 0.2
        assert r2.events == [] and r2.state.dwell_clock == 0.0

    def test_modes_alternate(self, sag_truth):
        modes = [e.from_mode for e in sag_truth.events]
        assert all(a is not b for a, b in zip(modes, modes[1:]))
        assert modes[0] is Mode.GFL

    def test_continuity_at_every_event(self, sag_truth):
        for e in sag_truth.events:
            assert abs(e.theta_plus - e.theta_minus) <= 1e-12
            assert abs(e.omega_plus - e.omega_minus) <= 1e-12

    def test_determinism(self):
        a = _hybrid(GridSignal.sag(), t_end=0.6, process_noise=1e-3, seed=3)
        b = _hybrid(GridSignal.sag(), t_end=0.6, process_noise=1e-3, seed=3)
        assert np.array_equal(a.x, b.x, equal_nan=True)
        assert [e.t_s for e in a.events] == [e.t_s for e in b.events]

    def test_no_reset_surge(self, sag_truth):
        nr = _hybrid(GridSignal.sag(), no_reset_map=True)
        assert len(nr.events) >= 1 and not nr.events[0].reset_map
        k = int(round(nr.events[0].t_s / 1e-5))
        assert np.nanmax(nr.current_magnitude()[k:]) >= 1.2 * np.nanmax(sag_truth.current_magnitude()[k:])
