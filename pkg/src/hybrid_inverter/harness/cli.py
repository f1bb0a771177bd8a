"""Command line: ``simulate``, ``estimate``, ``compare`` and ``ablate-reset``.

Exit status is 0 on success, 1 for usage or configuration errors and 2 for
numerical failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..errors import ConfigurationError, HybridInverterError
from ..sim import SimConfig, simulate_continuous
from . import io
from .experiment import MODELS, MetricsReport, initial_state, run_ablation, run_experiment, generate_truth
from .scenario import load_scenario

log = logging.getLogger("hybrid_inverter")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", default="sag",
                        help="scenario file, or the name of a shipped scenario (default: sag)")
    common.add_argument("--seed", type=int, default=None, help="random seed (default: first seed of the scenario)")
    common.add_argument("--out", default="results", help="output directory (default: results)")
    common.add_argument("--dt", type=float, default=None, help="integration step in seconds")
    common.add_argument("--t-end", type=float, default=None, help="simulation horizon in seconds")
    common.add_argument("--no-reset-map", action="store_true", help="use the ablation reset (zero mode states)")
    common.add_argument("--oracle-mode-signal", action="store_true",
                        help="drive the hybrid filter's switches from the true switch times")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="hybrid-inverter", description="Hybrid GFL/GFM inverter simulation and state estimation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    s = sub.add_parser("simulate", parents=[common], help="truth trajectory only")
    s.add_argument("--model", choices=MODELS, default="hybrid")
    e = sub.add_parser("estimate", parents=[common], help="truth, measurements and one estimator")
    e.add_argument("--model", choices=MODELS, default="hybrid")
    sub.add_parser("compare", parents=[common], help="both estimators on one measurement stream")
    a = sub.add_parser("ablate-reset", parents=[common], help="peak current with and without reset maps")
    a.add_argument("--window", type=float, default=None,
                   help="cap on each post-switch interval in seconds (default: until the next switch)")
    return p


def _write_experiment(out: Path, res, models) -> list[Path]:
    truth, scn = res.truth, res.scenario
    index = [0, *range(scn.steps_per_measurement, truth.t.size, scn.steps_per_measurement)]
    files = [io.write_truth(out / "truth.csv", truth, index), io.write_measurements(out / "meas.csv", res.meas_t, res.meas)]
    for m in models:
        files.append(io.write_estimate(out / f"est_{m}.csv", res.streams[m]))
    groups = {"truth": truth.events}
    if "hybrid" in res.streams:
        groups["hybrid_ekf"] = [j.record for j in res.streams["hybrid"].jumps if j.record is not None]
    files.append(io.write_events(out / "events.csv", groups))
    files.append(io.write_metrics(out / "metrics.csv", res.metrics.rows()))
    return files


def _summary(metrics: MetricsReport) -> str:
    lines = []
    for model, r in sorted(metrics.rmse.items()):
        overall = " ".join(f"{c}={v:.3e}" for c, v in r.overall.items())
        lines.append(f"{model:10s} rmse {overall}")
        if r.near is not None:
            lines.append(f"{'':10s} near {' '.join(f'{c}={v:.3e}' for c, v in r.near.items())}")
        lines.append(f"{'':10s} nis coverage {metrics.nis_coverage[model]:.3f}")
    for label, v in sorted(metrics.peak_current.items()):
        lines.append(f"peak |i| {label}: {v:.6g}")
    if metrics.peak_current_ratio is not None:
        lines.append(f"peak current ratio (no reset / reset): {metrics.peak_current_ratio:.4g}")
    for model, why in metrics.failures.items():
        lines.append(f"{model} failed: {why}")
    return "\n".join(lines)


def run(args) -> int:
    scn = load_scenario(args.scenario).with_overrides(
        dt=args.dt, t_end=args.t_end, seed=args.seed,
        no_reset_map=True if args.no_reset_map else None,
        oracle_mode_signal=True if args.oracle_mode_signal else None,
    )
    seed = scn.seeds[0]
    out = Path(args.out)
    if args.command == "simulate":
        if args.model == "continuous":
            cfg = SimConfig(scn.sim.dt, scn.sim.t_end, scn.sim.event_tol, scn.sim.max_bisections,
                            scn.sim.process_noise, seed, scn.sim.no_reset_map)
            truth = simulate_continuous(initial_state(scn).x, scn.grid, scn.params, cfg, scn.k_gain, scn.v_switch)
        else:
            truth = generate_truth(scn, seed)
        io.write_truth(out / "truth.csv", truth, range(0, truth.t.size, scn.steps_per_measurement))
        io.write_events(out / "events.csv", {"truth": truth.events})
        print(f"{len(truth.events)} switches; wrote {out}/truth.csv, {out}/events.csv")
        if truth.failure:
            print(f"simulation stopped: {truth.failure}", file=sys.stderr)
            return EXIT_NUMERIC
        return EXIT_OK
    if args.command in ("estimate", "compare"):
        models = (args.model,) if args.command == "estimate" else MODELS
        res = run_experiment(scn, seed, models)
        files = _write_experiment(out, res, models)
        print(_summary(res.metrics))
        print("wrote " + ", ".join(str(f) for f in files))
        return EXIT_NUMERIC if res.metrics.failures else EXIT_OK
    # ablate-reset
    res = run_ablation(scn, seed, args.window)
    stride = range(0, res.reset.t.size, scn.steps_per_measurement)
    files = [
        io.write_truth(out / "truth.csv", res.reset, stride),
        io.write_truth(out / "truth_no_reset.csv", res.no_reset, range(0, res.no_reset.t.size,
                                                                       scn.steps_per_measurement)),
        io.write_events(out / "events.csv", {"reset": res.reset.events, "no_reset": res.no_reset.events}),
        io.write_metrics(out / "metrics.csv", res.metrics.rows()),
    ]
    print(_summary(res.metrics))
    print("wrote " + ", ".join(str(f) for f in files))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return run(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HybridInverterError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
