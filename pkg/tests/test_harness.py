import math

import numpy as np
import pytest

from hybrid_inverter.errors import ConfigurationError
from hybrid_inverter.harness import io
from hybrid_inverter.harness.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from hybrid_inverter.harness.experiment import (
    compute_rmse, post_switch_peaks, run_ablation, run_experiment,
)
from hybrid_inverter.harness.scenario import load_scenario, parse_scenario, shipped_scenarios

CHANNELS = ("i_d", "i_q", "v_d", "v_q")


class TestRmse:
    def test_constant_offset(self):
        t = np.linspace(0.0, 1.0, 50)
        truth = np.zeros((50, 4))
        r = compute_rmse(truth, truth + 0.1, t, [], 0.05)
        for c in CHANNELS:
            assert r.overall[c] == pytest.approx(0.1, rel=1e-12)

    def test_hand_computed_example(self):
        t = np.arange(10) * 0.1
        err = np.array([0.3, -0.1, 0.0, 0.2, 0.5, -0.4, 0.1, 0.0, -0.2, 0.6])
        truth = np.tile(np.arange(10.0)[:, None], (1, 4))
        est = truth + err[:, None] * np.array([1.0, 2.0, -1.0, 0.5])
        r = compute_rmse(truth, est, t, [0.45], 0.1)
        # sum of squares 0.09+0.01+0+0.04+0.25+0.16+0.01+0+0.04+0.36 = 0.96
        assert r.overall["i_d"] == pytest.approx(math.sqrt(0.096), abs=1e-12)
        assert r.overall["i_q"] == pytest.approx(2 * math.sqrt(0.096), abs=1e-12)
        assert r.overall["v_q"] == pytest.approx(0.5 * math.sqrt(0.096), abs=1e-12)
        # samples at 0.4 and 0.5 are within 0.1 of 0.45 (and 0.3, 0.6 are not)
        assert r.n_near == 2
        assert r.near["i_d"] == pytest.approx(math.sqrt((0.25 + 0.16) / 2), abs=1e-12)

    def test_near_window_absent_without_events(self):
        t = np.linspace(0.0, 1.0, 11)
        r = compute_rmse(np.zeros((11, 4)), np.ones((11, 4)), t, [], 0.05)
        assert r.near is None and r.n_near == 0

    def test_identical_series_gives_zero(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(20, 4))
        r = compute_rmse(x, x.copy(), np.arange(20.0), [5.0], 2.0)
        assert all(v == 0.0 for v in r.overall.values())
        assert all(v == 0.0 for v in r.near.values())

    def test_misaligned_series_rejected(self):
        with pytest.raises(ValueError):
            compute_rmse(np.zeros((3, 4)), np.zeros((4, 4)), np.arange(3.0), [], 0.1)


class TestScenario:
    def test_shipped_scenarios_load(self):
        names = shipped_scenarios()
        assert "sag" in names
        for name in names:
            scn = load_scenario(name)
            assert scn.steps_per_measurement >= 1

    def test_defaults(self):
        scn = load_scenario("sag")
        assert scn.sim.dt == 1e-5 and scn.steps_per_measurement == 100
        assert scn.k_gain == 200.0
        assert scn.seeds == (0, 1, 2, 3, 4)

    @pytest.mark.parametrize("text", [
        "[bogus]\nx = 1\n",
        "[scenario]\nunknown = 3\n",
        "[scenario]\ndt = fast\n",
        "[scenario]\ndt = inf\n",
        "[noise]\nsigma = 1 2 3\n",
        "[grid]\npreset = wobble\n",
        "[grid]\npreset = segments\n",
        "[sim]\nno_reset_map = maybe\n",
        "[scenario]\nmeasurement_interval = 1.5e-5\n",
        "[estimator]\nk_gain = -1\n",
        "not an ini file",
    ])
    def test_invalid_text_raises_configuration_error(self, text):
        with pytest.raises(ConfigurationError):
            parse_scenario(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_scenario(tmp_path / "nope.cfg")

    def test_overrides(self):
        scn = load_scenario("sag").with_overrides(t_end=0.7, seed=9, no_reset_map=True)
        assert scn.sim.t_end == 0.7 and scn.seeds == (9,) and scn.sim.no_reset_map
        assert max(scn.grid.breakpoints()) <= 0.7


QUIET = """
[scenario]
name = quiet
t_end = 0.1
dt = 1e-5
measurement_interval = 1e-3
[grid]
preset = constant
[sim]
process_noise = 0
[noise]
sigma = 1e-16 1e-16 1e-16 1e-16
"""


def test_noise_free_run_without_events_tracks_truth():
    scn = parse_scenario(QUIET)
    res = run_experiment(scn, 0)
    assert not res.truth.events
    for model in ("hybrid", "continuous"):
        r = res.metrics.rmse[model]
        assert r.near is None
        assert max(r.overall.values()) < 1e-6


def test_ablation_reports_ratio():
    scn = load_scenario("sag").with_overrides(t_end=0.6)
    res = run_ablation(scn, 0)
    m = res.metrics
    assert m.peak_current_ratio == pytest.approx(m.peak_current["no_reset"] / m.peak_current["reset"])
    assert "reset:switch_0" in m.peak_current
    assert post_switch_peaks(res.reset) == [m.peak_current["reset:switch_0"]]


class TestCli:
    def test_bogus_flag(self, capsys):
        assert main(["compare", "--bogus"]) == EXIT_CONFIG

    def test_no_command(self):
        assert main([]) == EXIT_CONFIG

    def test_missing_scenario(self, tmp_path):
        assert main(["simulate", "--scenario", str(tmp_path / "missing.cfg"), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_bad_scenario(self, tmp_path):
        f = tmp_path / "bad.cfg"
        f.write_text("[scenario]\ndt = -\n")
        assert main(["simulate", "--scenario", str(f), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_numerical_failure_exit_code(self, tmp_path):
        f = tmp_path / "wild.cfg"
        # explicit RK4 is unstable on the fast current loop at this step size
        f.write_text("[scenario]\nt_end = 0.1\ndt = 1e-4\n[grid]\npreset = constant\n")
        assert main(["simulate", "--scenario", str(f), "--out", str(tmp_path / "o")]) == EXIT_NUMERIC

    def test_simulate_writes_truth(self, tmp_path):
        out = tmp_path / "sim"
        assert main(["simulate", "--t-end", "0.05", "--out", str(out)]) == EXIT_OK
        header, body = io.read_table(out / "truth.csv")
        assert header[0] == "t" and body.shape[0] == 51

    def test_compare_outputs_and_determinism(self, tmp_path):
        runs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["compare", "--t-end", "0.55", "--seed", "3", "--out", str(out)]) == EXIT_OK
            runs.append(out)
        expected = {"truth.csv", "meas.csv", "est_hybrid.csv", "est_continuous.csv", "events.csv", "metrics.csv"}
        assert expected <= {p.name for p in runs[0].iterdir()}
        for fname in expected:
            assert (runs[0] / fname).read_bytes() == (runs[1] / fname).read_bytes()
        header, _ = io.read_table(runs[0] / "metrics.csv")
        text = (runs[0] / "metrics.csv").read_text()
        assert "rmse_ratio_near_switch" in text and "nis_coverage" in text

    def test_ablate_reset_prints_ratio(self, tmp_path, capsys):
        assert main(["ablate-reset", "--t-end", "0.6", "--out", str(tmp_path)]) == EXIT_OK
        assert "peak current ratio" in capsys.readouterr().out
        assert "peak_current_ratio" in (tmp_path / "metrics.csv").read_text()
