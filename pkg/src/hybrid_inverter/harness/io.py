"""CSV output; every float is written with 17 significant digits."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..estimator import BeliefStream
from ..hybrid import SwitchRecord
from ..sim import CONTINUOUS_CODE, MAX_STATE_DIM, Trajectory
from ..states import MEASUREMENT_CHANNELS

MODE_NAMES = {0: "GFL", 1: "GFM", CONTINUOUS_CODE: "CONT"}
TRUTH_CHANNELS = ("theta", "omega", "i_d", "i_q", "v_d", "v_q", "p", "q", "v_ref")
STATE_COLUMNS = tuple(f"x_{j}" for j in range(MAX_STATE_DIM))


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.17g}"
    return str(value)


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_table(path) -> tuple[list[str], np.ndarray]:
    """Header and the numeric body of a CSV written here (non-numeric cells become NaN)."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]

    def num(cell):
        try:
            return float(cell)
        except ValueError:
            return math.nan
    return header, np.array([[num(c) for c in r] for r in body], dtype=float).reshape(len(body), len(header))


def write_truth(path, traj: Trajectory, index: np.ndarray | None = None) -> Path:
    """Sampled truth; ``index`` selects rows (all samples by default)."""
    idx = np.arange(traj.t.size) if index is None else np.asarray(index)
    out = traj.outputs
    cols = [out[c][idx] for c in TRUTH_CHANNELS]
    i_mag = np.hypot(out["i_d"][idx], out["i_q"][idx])
    header = ["t", "mode", *TRUTH_CHANNELS, "i_mag", *STATE_COLUMNS]
    rows = (
        [traj.t[k], MODE_NAMES[int(traj.mode[k])], *(c[j] for c in cols), i_mag[j], *traj.x[k]]
        for j, k in enumerate(idx)
    )
    return write_table(path, header, rows)


def write_measurements(path, t, z) -> Path:
    return write_table(path, ["t", *MEASUREMENT_CHANNELS], ([tk, *zk] for tk, zk in zip(t, z)))


def write_estimate(path, stream: BeliefStream) -> Path:
    """Estimated channels, NIS, innovations, the state estimate and its variances."""
    header = ["t", "mode", *MEASUREMENT_CHANNELS, "nis", *(f"nu_{c}" for c in MEASUREMENT_CHANNELS),
              *(f"xhat_{j}" for j in range(MAX_STATE_DIM)), *(f"var_{j}" for j in range(MAX_STATE_DIM))]
    rows = (
        [stream.t[k], MODE_NAMES[int(stream.mode[k])], *stream.z_hat[k], stream.nis[k], *stream.innovation[k],
         *stream.x_hat[k], *stream.P_diag[k]]
        for k in range(stream.t.size)
    )
    return write_table(path, header, rows)


EVENT_FIELDS = ("t_s", "from_mode", "to_mode", "guard", "theta_minus", "theta_plus", "omega_minus", "omega_plus",
                "p_s", "q_s", "v_grid_minus", "i_s", "p_0_plus", "q_0_plus", "psi", "r_plus", "l_plus",
                "v_ref_plus", "guard_residual", "reset_map")


def write_events(path, groups: dict) -> Path:
    """Switch records; ``groups`` maps a source label to a list of :class:`SwitchRecord`."""
    rows = []
    for source, records in groups.items():
        for rec in records:
            row = rec.as_row() if isinstance(rec, SwitchRecord) else dict(rec)
            rows.append([source, *(row.get(f, math.nan) for f in EVENT_FIELDS)])
    return write_table(path, ["source", *EVENT_FIELDS], rows)


def write_metrics(path, rows: Iterable[tuple]) -> Path:
    return write_table(path, ["metric", "model", "channel", "value"], rows)
