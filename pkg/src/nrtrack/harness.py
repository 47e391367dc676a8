"""Run scenarios and write CSV traces plus summary tables.

Closed-loop runs write one ``trace_<speed>.csv`` per speed, ``summary.csv``
and a ``run.json`` sidecar recording what :func:`regenerate_report` needs to
rebuild the summary from the traces alone. Platoon runs write one CSV per
robot, ``spacing.csv`` and ``platoon_summary.csv``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .controller import SimTrace, SimulationAborted, run_closed_loop, stability_sweep
from .odeint import StepConfig
from .platoon import run_platoon
from .scenario import CLOSED_LOOP, PLATOON, Scenario

LOG = logging.getLogger(__name__)

OUTPUT_ENV = "NRTRACK_OUTPUT_DIR"
META_FILE = "run.json"
SUMMARY_FILE = "summary.csv"
PLATOON_SUMMARY_FILE = "platoon_summary.csv"
SWEEP_FILE = "sweep.csv"

SUMMARY_COLUMNS = (
    "speed_mps", "status", "rows", "t_end_s",
    "peak_lateral_error_m", "peak_heading_error_deg", "peak_control_error_m", "peak_abs_a_long_mps2",
    "post_peak_lateral_error_m", "post_peak_heading_error_deg", "post_peak_control_error_m",
    "post_peak_abs_a_long_mps2", "transient_cutoff_s", "curve_substitute", "u_init",
)


class EmptyTraceError(ValueError):
    """A run would produce no samples."""


@dataclass
class RunOutcome:
    output_dir: Path
    files: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    summary: list = field(default_factory=list)


def output_dir_for(scenario: Scenario, override=None) -> Path:
    """``override``, then ``$NRTRACK_OUTPUT_DIR``, then the scenario's own setting, then ``runs/<name>``."""
    if override:
        return Path(override)
    env = os.environ.get(OUTPUT_ENV)
    if env:
        return Path(env) / scenario.name
    if scenario.output_dir:
        return Path(scenario.output_dir)
    return Path("runs") / scenario.name


def fmt(value) -> str:
    """Shortest text that parses back to the same float."""
    return repr(float(value))


def speed_tag(speed: float) -> str:
    return f"{speed:.6g}".replace(".", "p")


def initial_state(scenario: Scenario, plant, curve, speed: float) -> np.ndarray:
    if scenario.start == "on_curve":
        p0 = curve.eval(0.0)
        vel = curve.r_dot(0.0)
        psi = math.atan2(vel[1], vel[0])
    else:
        p0, psi = np.zeros(2), 0.0
    if scenario.plant["type"] == "bicycle":
        return np.array([p0[0], p0[1], speed, 0.0, psi, 0.0])
    x0 = np.zeros(plant.n)
    x0[:2] = p0
    return x0


def trace_columns(trace: SimTrace) -> list:
    return (["t"] + list(trace.state_names) + list(trace.input_names)
            + ["control_error", "tracking_error", "lateral_error", "heading_error_deg", "a_long"])


def _a_long(trace: SimTrace) -> np.ndarray:
    for name in ("a_long", "a_l"):
        if name in trace.input_names:
            return trace.u[:, trace.input_names.index(name)]
    return np.full(len(trace), math.nan)


def write_trace_csv(path: Path, trace: SimTrace):
    a_long = _a_long(trace)
    heading_deg = np.degrees(trace.heading_error)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_columns(trace))
        for k in range(len(trace)):
            w.writerow([fmt(trace.t[k])] + [fmt(v) for v in trace.x[k]] + [fmt(v) for v in trace.u[k]]
                       + [fmt(trace.control_error[k]), fmt(trace.tracking_error[k]),
                          fmt(trace.lateral_error[k]), fmt(heading_deg[k]), fmt(a_long[k])])


def read_trace_csv(path: Path) -> dict:
    """Columns of a trace CSV as float arrays, keyed by header name."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return {name: data[:, j] for j, name in enumerate(header)}


def _peak(values: np.ndarray) -> float:
    values = values[~np.isnan(values)]
    return float(np.max(np.abs(values))) if values.size else math.nan


def summarize(columns: dict, speed: float, status: str, cutoff: float, substitute: bool,
              u_init: str) -> dict:
    t = columns["t"]
    post = t >= cutoff
    row = {"speed_mps": fmt(speed), "status": status, "rows": str(t.size),
           "t_end_s": fmt(t[-1]) if t.size else "nan"}
    for prefix, mask in (("peak_", np.ones_like(t, dtype=bool)), ("post_peak_", post)):
        row[prefix + "lateral_error_m"] = fmt(_peak(columns["lateral_error"][mask]))
        row[prefix + "heading_error_deg"] = fmt(_peak(columns["heading_error_deg"][mask]))
        row[prefix + "control_error_m"] = fmt(_peak(columns["control_error"][mask]))
        row[prefix + "abs_a_long_mps2"] = fmt(_peak(columns["a_long"][mask]))
    row["transient_cutoff_s"] = fmt(cutoff)
    row["curve_substitute"] = "yes" if substitute else "no"
    row["u_init"] = u_init
    return row


def render_table(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _u_init_note(scenario: Scenario, m: int) -> str:
    u = scenario.controller.u_init
    values = np.zeros(m) if u is None else np.asarray(u, dtype=float)
    return " ".join(fmt(v) for v in values)


def run_scenario(scenario: Scenario, output_dir=None) -> RunOutcome:
    """Execute a scenario and write its artifacts; returns what was written."""
    if not scenario.duration > 0:
        raise EmptyTraceError(f"scenario {scenario.name!r} has duration {scenario.duration!r}; nothing to record")
    out = output_dir_for(scenario, output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if scenario.mode == PLATOON:
        return _run_platoon_scenario(scenario, out)
    if scenario.mode != CLOSED_LOOP:
        raise ValueError(f"unknown scenario mode {scenario.mode!r}")

    plant = scenario.build_plant()
    outcome = RunOutcome(out)
    meta_runs = []
    for speed in scenario.speeds:
        curve = scenario.build_curve(speed)
        x0 = initial_state(scenario, plant, curve, speed)
        status = "ok"
        try:
            trace = run_closed_loop(plant, curve, scenario.controller, scenario.sim_dt, scenario.duration,
                                    x0, plant_step=StepConfig(scenario.sim_dt, scenario.plant_method),
                                    metric_window=scenario.metric_window)
        except SimulationAborted as exc:
            trace = exc.trace
            status = f"aborted at t={exc.t!r}: {type(exc.cause).__name__}: {exc.cause}"
            outcome.failures.append((speed, status))
            LOG.error("speed %g m/s %s", speed, status)
        path = out / f"trace_{speed_tag(speed)}mps.csv"
        write_trace_csv(path, trace)
        outcome.files.append(path)
        meta_runs.append({"speed_mps": speed, "trace": path.name, "status": status})

    meta = {"name": scenario.name, "mode": CLOSED_LOOP, "transient_cutoff_s": scenario.transient_cutoff,
            "curve_substitute": bool(curve.is_substitute), "u_init": _u_init_note(scenario, plant.m),
            "runs": meta_runs}
    (out / META_FILE).write_text(json.dumps(meta, indent=2) + "\n")
    outcome.files.append(out / META_FILE)
    outcome.summary = _write_closed_loop_summary(out, meta)
    outcome.files.append(out / SUMMARY_FILE)
    return outcome


def _write_closed_loop_summary(out: Path, meta: dict) -> list:
    rows = []
    for run in meta["runs"]:
        columns = read_trace_csv(out / run["trace"])
        rows.append(summarize(columns, run["speed_mps"], run["status"], meta["transient_cutoff_s"],
                              meta["curve_substitute"], meta["u_init"]))
    (out / SUMMARY_FILE).write_text(render_table(SUMMARY_COLUMNS, rows))
    return rows


def _run_platoon_scenario(scenario: Scenario, out: Path) -> RunOutcome:
    curve = scenario.build_curve()
    result = run_platoon(curve, scenario.platoon, scenario.duration)
    outcome = RunOutcome(out)
    robot_files = []
    for i, rt in enumerate(result.robots, start=1):
        path = out / f"robot_{i}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "z1", "z2", "psi", "p1", "p2", "u1", "u2", "rho1", "rho2", "control_error"])
            for k in range(rt.t.size):
                w.writerow([fmt(rt.t[k])] + [fmt(v) for v in rt.x[k]] + [fmt(v) for v in rt.p[k]]
                           + [fmt(v) for v in rt.u[k]] + [fmt(v) for v in rt.rho[k]]
                           + [fmt(rt.control_error[k])])
        robot_files.append(path.name)
        outcome.files.append(path)
    path = out / "spacing.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"spacing_{j}_{j + 1}" for j in range(1, scenario.platoon.n_robots)])
        for k in range(result.t.size):
            w.writerow([fmt(result.t[k])] + [fmt(v) for v in result.spacing[k]])
    outcome.files.append(path)
    meta = {"name": scenario.name, "mode": PLATOON, "transient_cutoff_s": scenario.transient_cutoff,
            "curve_substitute": bool(curve.is_substitute), "spacing_m": scenario.platoon.d,
            "robots": robot_files, "fallback_events": result.fallback_events,
            "order_violations": result.order_violations}
    (out / META_FILE).write_text(json.dumps(meta, indent=2) + "\n")
    outcome.files.append(out / META_FILE)
    outcome.summary = _write_platoon_summary(out, meta)
    outcome.files.append(out / PLATOON_SUMMARY_FILE)
    if result.fallback_events or result.order_violations:
        outcome.failures.append(("platoon", f"{result.fallback_events} fallbacks, "
                                            f"{result.order_violations} ordering violations"))
    return outcome


PLATOON_SUMMARY_COLUMNS = ("quantity", "robot", "value", "transient_cutoff_s", "curve_substitute")


def _write_platoon_summary(out: Path, meta: dict) -> list:
    cutoff = meta["transient_cutoff_s"]
    common = {"transient_cutoff_s": fmt(cutoff), "curve_substitute": "yes" if meta["curve_substitute"] else "no"}
    rows = []
    for i, name in enumerate(meta["robots"], start=1):
        cols = read_trace_csv(out / name)
        post = cols["t"] >= cutoff
        err = cols["control_error"][post]
        rows.append({"quantity": "mean_control_error_m", "robot": str(i),
                     "value": fmt(np.mean(err)) if err.size else "nan", **common})
        rows.append({"quantity": "peak_control_error_m", "robot": str(i), "value": fmt(_peak(err)), **common})
    spacing = read_trace_csv(out / "spacing.csv")
    post = spacing["t"] >= cutoff
    for key in sorted(k for k in spacing if k != "t"):
        s = spacing[key][post]
        robot = key.split("_", 1)[1]
        rows.append({"quantity": "min_spacing_m", "robot": robot,
                     "value": fmt(np.min(s)) if s.size else "nan", **common})
        rows.append({"quantity": "max_spacing_m", "robot": robot,
                     "value": fmt(np.max(s)) if s.size else "nan", **common})
    for key in ("fallback_events", "order_violations"):
        rows.append({"quantity": key, "robot": "all", "value": str(meta[key]), **common})
    (out / PLATOON_SUMMARY_FILE).write_text(render_table(PLATOON_SUMMARY_COLUMNS, rows))
    return rows


def regenerate_report(directory) -> Path:
    """Rebuild the summary table of a finished run from its CSV traces."""
    out = Path(directory)
    meta_path = out / META_FILE
    if not meta_path.exists():
        raise FileNotFoundError(f"{meta_path} not found; is {out} a run directory?")
    meta = json.loads(meta_path.read_text())
    if meta.get("mode") == PLATOON:
        _write_platoon_summary(out, meta)
        return out / PLATOON_SUMMARY_FILE
    _write_closed_loop_summary(out, meta)
    return out / SUMMARY_FILE


SWEEP_COLUMNS = ("alpha", "horizon_s", "status", "peak_tracking_error_m", "t_blowup_s", "reason")


def run_sweep(scenario: Scenario, alphas, horizons, output_dir=None, *, speed: float | None = None,
              duration: float | None = None, blowup_norm: float = 1e6):
    """Alpha/horizon stability grid for a closed-loop scenario; writes ``sweep.csv``."""
    if scenario.mode != CLOSED_LOOP:
        raise ValueError("sweeps need a closed-loop scenario")
    alphas, horizons = list(alphas), list(horizons)
    if not alphas or not horizons:
        raise ValueError("stability sweep needs non-empty alpha and horizon grids")
    speed = scenario.speeds[0] if speed is None else speed
    duration = scenario.duration if duration is None else duration
    if not duration > 0:
        raise EmptyTraceError(f"sweep duration {duration!r} leaves nothing to record")
    plant = scenario.build_plant()
    curve = scenario.build_curve(speed)
    x0 = initial_state(scenario, plant, curve, speed)
    result = stability_sweep(plant, curve, alphas, horizons, scenario.sim_dt, duration, x0,
                             replace(scenario.controller, controller_dt=scenario.sim_dt),
                             blowup_norm=blowup_norm, metric_window=scenario.metric_window,
                             plant_step=StepConfig(scenario.sim_dt, scenario.plant_method))
    out = output_dir_for(scenario, output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for alpha, T, cell in result.rows():
        rows.append({"alpha": fmt(alpha), "horizon_s": fmt(T), "status": cell.status,
                     "peak_tracking_error_m": fmt(cell.peak_error),
                     "t_blowup_s": fmt(cell.t_blowup), "reason": cell.reason})
    path = out / SWEEP_FILE
    path.write_text(render_table(SWEEP_COLUMNS, rows))
    return result, path
