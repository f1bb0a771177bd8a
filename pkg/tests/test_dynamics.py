import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from conftest import nominal_sample
from hybrid_inverter.dynamics import (
    embed_gfl_as_gfm, eval_common, eval_gfl, eval_gfm, logistic, measure, pull_back_gfm_rates,
    smoothed_field, smoothed_measure,
)
from hybrid_inverter.errors import NumericalDomainError
from hybrid_inverter.grid import GridSample
from hybrid_inverter.params import InverterParams
from hybrid_inverter.sim import equilibrium_gfl
from hybrid_inverter.states import Mode

unit = st.floats(-1.0, 1.0, allow_nan=False)
states8 = st.lists(unit, min_size=8, max_size=8)
states7 = st.lists(unit, min_size=7, max_size=7)


class TestCommonBlock:
    def test_zero_tracking_error(self, params):
        # i = i_ref, gamma = 0, i_q = 0 at nominal frequency
        c = eval_common(0.7, 0.0, 0.0, 0.0, 0.7, 0.0, params.omega_0, 1.0, 0.0, params)
        assert c.d_gamma_d == 0.0 and c.d_gamma_q == 0.0
        assert c.v_d == 0.0
        assert c.v_q == pytest.approx(-params.omega_0 * params.l_f * 0.7, abs=1e-15)

    def test_zero_state_unit_grid(self, params):
        c = eval_common(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, params.omega_0, 1.0, 0.0, params)
        assert c.d_i_d == pytest.approx(-params.omega_b / 0.01, rel=1e-15)
        assert c.d_i_q == 0.0

    def test_effective_impedance_used(self, params):
        p = params.replace(r_eff=0.3, l_eff=0.05)
        c = eval_common(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, p.omega_0, 1.0, 0.0, p)
        assert c.d_i_d == pytest.approx(-p.omega_b / 0.05)

    def test_non_finite_rejected(self, params):
        with pytest.raises(NumericalDomainError):
            eval_common(math.nan, 0, 0, 0, 0, 0, params.omega_0, 1.0, 0.0, params)

    @given(st.lists(unit, min_size=8, max_size=8), st.floats(0.1, 3.0))
    def test_homogeneous_in_currents_and_grid(self, v, c):
        p = InverterParams()
        i_d, i_q, g_d, g_q, r_d, r_q, vg_d, vg_q = v
        a = eval_common(i_d, i_q, g_d, g_q, r_d, r_q, p.omega_0, vg_d, vg_q, p)
        b = eval_common(c * i_d, c * i_q, c * g_d, c * g_q, c * r_d, c * r_q, p.omega_0, c * vg_d, c * vg_q, p)
        for x, y in zip(a, b):
            assert y == pytest.approx(c * x, rel=1e-12, abs=1e-9)


class TestGfl:
    def test_locked_pll_gives_nominal_frequency(self, params):
        x = np.zeros(8)
        _, out = eval_gfl(x, nominal_sample(params), params)
        assert out.omega == params.omega_0

    def test_outer_loop_at_setpoint(self, params):
        x = equilibrium_gfl(params)
        dx, out = eval_gfl(x, nominal_sample(params), params)
        assert out.p == pytest.approx(params.p_ref, abs=1e-10)
        assert abs(dx[6]) < 1e-10 and abs(dx[7]) < 1e-10

    @given(states8, st.floats(0.5, 1.2), st.floats(-math.pi, math.pi))
    def test_matches_symbolic_oracle(self, x, v_mag, theta_g):
        p = InverterParams()
        dx, out = eval_gfl(np.array(x), GridSample(v_mag, theta_g, p.omega_0, 0.0), p)
        ref = oracles.gfl_field(x, v_mag, theta_g, p)
        scale = np.maximum(1.0, np.abs(ref))
        assert np.max(np.abs(dx - ref) / scale) < 1e-12
        v_d, v_q, omega, pw, qw = oracles.gfl_outputs(x, v_mag, theta_g, p)
        assert out.v_d == pytest.approx(v_d, abs=1e-12) and out.v_q == pytest.approx(v_q, abs=1e-12)
        assert out.omega == pytest.approx(omega, abs=1e-12)


class TestGfm:
    def test_droop_at_bias(self, params):
        from hybrid_inverter.dynamics import droop
        omega, v_ref = droop(params.p_0, params.q_0, params)
        assert omega == params.omega_0 and v_ref == params.v_0

    def test_droop_slope(self, params):
        from hybrid_inverter.dynamics import droop
        omega, _ = droop(params.p_0 + 0.5, params.q_0, params)
        assert omega == pytest.approx(params.omega_0 - 0.01, abs=1e-12)

    @given(states7, st.floats(0.5, 1.2), st.floats(-math.pi, math.pi))
    def test_matches_symbolic_oracle(self, x, v_mag, theta_g):
        p = InverterParams()
        dx, out = eval_gfm(np.array(x), GridSample(v_mag, theta_g, p.omega_0, 0.0), p)
        ref = oracles.gfm_field(x, v_mag, theta_g, p)
        scale = np.maximum(1.0, np.abs(ref))
        assert np.max(np.abs(dx - ref) / scale) < 1e-12
        v_d, v_q, omega, pw, qw, v_ref = oracles.gfm_outputs(x, v_mag, theta_g, p)
        assert out.omega == pytest.approx(omega, abs=1e-12)
        assert out.v_ref == pytest.approx(v_ref, abs=1e-12)

    def test_filtered_variant_dimensions(self):
        p = InverterParams(measured_power="filtered")
        dx, out = eval_gfm(np.zeros(9), GridSample(1.0, 0.0, p.omega_0, 0.0), p)
        assert dx.shape == (9,)
        dx, _ = eval_gfl(np.zeros(10), GridSample(1.0, 0.0, p.omega_0, 0.0), p)
        assert dx.shape == (10,)


@given(st.sampled_from([Mode.GFL, Mode.GFM]), st.lists(unit, min_size=8, max_size=8), st.floats(0.5, 1.2))
def test_power_identity(mode, x, v_mag):
    p = InverterParams()
    x = np.array(x[:8 if mode is Mode.GFL else 7])
    _, out = (eval_gfl if mode is Mode.GFL else eval_gfm)(x, GridSample(v_mag, 0.3, p.omega_0, 0.0), p)
    assert out.p == pytest.approx(out.v_d * x[2] + out.v_q * x[3], rel=1e-12, abs=1e-12)
    assert out.q == pytest.approx(out.v_q * x[2] - out.v_d * x[3], rel=1e-12, abs=1e-12)


def test_frame_consistency(params):
    s = nominal_sample(params)
    _, out = eval_gfl(np.zeros(8), s, params)
    assert out.omega == params.omega_0
    # GFM with p_m = p_0 through the filtered variant (p_m, q_m are states there)
    pf = params.replace(measured_power="filtered")
    x = np.zeros(9)
    x[7], x[8] = pf.p_0, pf.q_0
    _, out = eval_gfm(x, s, pf)
    assert out.omega == pf.omega_0 and out.v_ref == pf.v_0


def test_equilibrium_is_fixed(params):
    x = equilibrium_gfl(params)
    dx, _ = eval_gfl(x, nominal_sample(params), params)
    dx[5] -= params.omega_0  # the angle advances at the grid frequency
    assert np.max(np.abs(dx)) < 1e-9


class TestMeasure:
    def test_current_channels_copy_states(self, params):
        x = np.zeros(8)
        x[2], x[3] = 0.3, -0.1
        z = measure(Mode.GFL, x, nominal_sample(params), params)
        assert z[0] == 0.3 and z[1] == -0.1

    def test_zero_state_zero_grid_without_setpoints(self, params):
        p = params.replace(p_ref=0.0, q_ref=0.0)
        z = measure(Mode.GFL, np.zeros(8), GridSample(0.0, 0.0, p.omega_0, 0.0), p)
        np.testing.assert_array_equal(z, np.zeros(4))

    def test_equilibrium_voltage_matches_power(self, params):
        x = equilibrium_gfl(params)
        z = measure(Mode.GFL, x, nominal_sample(params), params)
        assert z[2] * z[0] + z[3] * z[1] == pytest.approx(params.p_ref, abs=1e-10)
        assert z[3] * z[0] - z[2] * z[1] == pytest.approx(params.q_ref, abs=1e-10)

    @given(states8)
    def test_voltage_channels_equal_common_block(self, x):
        p = InverterParams()
        s = GridSample(1.0, 0.2, p.omega_0, 0.0)
        x = np.array(x)
        _, out = eval_gfl(x, s, p)
        c = eval_common(x[2], x[3], x[0], x[1], out.i_d_ref, out.i_q_ref, out.omega, out.v_grid_d, out.v_grid_q, p)
        z = measure(Mode.GFL, x, s, p)
        assert z[2] == c.v_d and z[3] == c.v_q


class TestSmoothed:
    def test_logistic_at_threshold(self):
        assert logistic(0.9, 50.0, 0.9) == 0.5

    def test_logistic_no_overflow(self):
        with np.errstate(over="raise"):
            lo = logistic(-1e6, 1e6, 0.9)
            hi = logistic(1e6, 1e6, 0.9)
        assert 0.0 <= lo < 1e-200 and hi == 1.0

    def test_midpoint_at_threshold(self, params):
        x = equilibrium_gfl(params)
        s = GridSample(params.v_th_lo, 0.0, params.omega_0, 0.0)
        f = smoothed_field(x, s, params, 30.0)
        f_gfl, _ = eval_gfl(x, s, params)
        f_gfm, _ = eval_gfm(embed_gfl_as_gfm(x, params), s, params)
        mid = 0.5 * f_gfl + 0.5 * pull_back_gfm_rates(f_gfm, params)
        assert np.allclose(f, mid, rtol=0, atol=1e-12)

    def test_high_voltage_limit_is_gfl(self, params):
        x = equilibrium_gfl(params)
        s = GridSample(1.0, 0.0, params.omega_0, 0.0)
        f = smoothed_field(x, s, params, 2000.0)
        f_gfl, _ = eval_gfl(x, s, params)
        assert np.array_equal(f, f_gfl)

    def test_blend_below_threshold(self, params):
        x = equilibrium_gfl(params)
        s = GridSample(params.v_th_lo - 0.05, 0.1, params.omega_0, 0.0)
        f, sig = smoothed_field(x, s, params, 100.0, with_weight=True)
        assert sig == pytest.approx(1.0 / (1.0 + math.exp(5.0)), rel=1e-14)
        assert sig == pytest.approx(6.69e-3, abs=5e-6)
        f_gfl, _ = eval_gfl(x, s, params)
        f_gfm, _ = eval_gfm(embed_gfl_as_gfm(x, params), s, params)
        oracle = sig * f_gfl + (1 - sig) * pull_back_gfm_rates(f_gfm, params)
        assert np.max(np.abs(f - oracle)) < 1e-12

    @given(states8, st.floats(0.7, 1.1), st.floats(1.0, 300.0))
    def test_convex_combination(self, x, v_mag, k):
        p = InverterParams()
        x = np.array(x)
        s = GridSample(v_mag, 0.0, p.omega_0, 0.0)
        f = smoothed_field(x, s, p, k)
        a, _ = eval_gfl(x, s, p)
        b = pull_back_gfm_rates(eval_gfm(embed_gfl_as_gfm(x, p), s, p)[0], p)
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        tol = 1e-9 * np.maximum(1.0, np.abs(f))
        assert np.all(f >= lo - tol) and np.all(f <= hi + tol)

    def test_k_gain_must_be_positive(self, params):
        with pytest.raises(NumericalDomainError):
            smoothed_field(np.zeros(8), nominal_sample(params), params, 0.0)

    def test_embedding_keeps_current_commands(self, params):
        # the integral parts of the two current commands agree under the embedding
        x = np.array([0.1, -0.2, 0.5, -0.2, 0.0, 0.3, 0.01, 0.02])
        xm = embed_gfl_as_gfm(x, params)
        assert xm[5] == params.k_i_p * x[7] and xm[6] == params.k_i_q * x[6]
        assert xm[4] == x[5]

    def test_measure_blend_limits(self, params):
        x = equilibrium_gfl(params)
        s = GridSample(1.0, 0.0, params.omega_0, 0.0)
        assert np.array_equal(smoothed_measure(x, s, params, 2000.0), measure(Mode.GFL, x, s, params))
