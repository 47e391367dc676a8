"""Scenario files: INI-style text with explicit units in the key names.

A scenario has a ``[scenario]`` section plus ``[plant]``, ``[curve]`` and
``[controller]`` for closed-loop runs, or ``[curve]`` and ``[platoon]`` for
platoon runs. Unknown sections or keys are rejected. See ``README.md`` for
the full key list.
"""

from __future__ import annotations

import ast
import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .controller import ControllerConfig, DAMPED, FAIL
from .odeint import METHODS
from .platoon import PlatoonConfig
from .plants import BicycleParams, PlantModel, V_MIN, bicycle_plant, integrator_plant
from .predictor import PredictorConfig
from .reference import (
    CircleCurve,
    ClosedSplineCurve,
    LaneChangeCurve,
    LineCurve,
    ReferenceCurve,
    rounded_rectangle_points,
)

SCENARIO_DIR = Path(__file__).with_name("scenarios")

CLOSED_LOOP = "closed_loop"
PLATOON = "platoon"


class ScenarioError(ValueError):
    """Scenario file could not be parsed or failed validation."""

    def __init__(self, source, problems):
        self.source = str(source)
        self.problems = list(problems)
        super().__init__(f"{self.source}: " + "; ".join(self.problems))


# key -> (kind, required, default); kinds: float, int, str, bool, floats, profile
_SCHEMA = {
    "scenario": {
        "name": ("str", True, None),
        "mode": ("str", False, CLOSED_LOOP),
        "duration_s": ("float", True, None),
        "sim_dt_s": ("float", False, None),
        "speeds_mps": ("floats", False, None),
        "speeds_kmh": ("floats", False, None),
        "transient_cutoff_s": ("float", False, 5.0),
        "metric_window_s": ("float", False, 5.0),
        "start": ("str", False, "origin"),
        "plant_method": ("str", False, "euler"),
        "output_dir": ("str", False, None),
    },
    "plant": {
        "type": ("str", True, None),
        "mass_kg": ("float", False, None),
        "yaw_inertia_kgm2": ("float", False, None),
        "lf_m": ("float", False, None),
        "lr_m": ("float", False, None),
        "caf_n_per_rad": ("float", False, None),
        "car_n_per_rad": ("float", False, None),
        "v_min_mps": ("float", False, V_MIN),
        "jacobian": ("str", False, "analytic"),
        "dimension": ("int", False, 2),
    },
    "curve": {
        "type": ("str", True, None),
        "width_m": ("float", False, 60.0),
        "height_m": ("float", False, 40.0),
        "corner_radius_m": ("float", False, 15.0),
        "n_points": ("int", False, 32),
        "clockwise": ("bool", False, False),
        "speed_profile": ("profile", False, None),
        "mean_speed_mps": ("float", False, None),
        "radius_m": ("float", False, 1.0),
        "center_x_m": ("float", False, 0.0),
        "center_y_m": ("float", False, 0.0),
        "heading_deg": ("float", False, 0.0),
    },
    "controller": {
        "alpha": ("float", True, None),
        "horizon_s": ("float", True, None),
        "predictor_dt_s": ("float", True, None),
        "predictor_method": ("str", False, "euler"),
        "singular_policy": ("str", False, FAIL),
        "damping": ("float", False, None),
        "u_init": ("floats", False, None),
    },
    "platoon": {
        "n_robots": ("int", False, 4),
        "spacing_m": ("float", False, 0.25),
        "offset_m": ("float", False, 0.08),
        "gamma": ("float", False, 0.0455),
        "alpha": ("float", False, 45.0),
        "horizon_s": ("float", False, 0.6),
        "dt_s": ("float", False, 0.033),
        "search_window_s": ("float", False, 0.2),
    },
}

_CURVE_TYPES = ("lane_change", "closed_spline", "circle", "line")
_PLANT_TYPES = ("bicycle", "integrator")


@dataclass(frozen=True)
class Scenario:
    name: str
    mode: str
    duration: float
    sim_dt: float
    speeds: tuple
    curve: dict
    plant: dict = field(default_factory=dict)
    controller: Optional[ControllerConfig] = None
    platoon: Optional[PlatoonConfig] = None
    transient_cutoff: float = 5.0
    metric_window: float = 5.0
    start: str = "origin"
    plant_method: str = "euler"
    output_dir: Optional[str] = None
    source: Optional[str] = None

    def build_plant(self) -> PlantModel:
        return build_plant(self.plant)

    def build_curve(self, speed: float | None = None) -> ReferenceCurve:
        return build_curve(self.curve, speed)


def _convert(kind: str, raw: str):
    raw = raw.strip()
    if kind == "float":
        value = float(raw)
        if not math.isfinite(value):
            raise ValueError("must be finite")
        return value
    if kind == "int":
        return int(raw)
    if kind == "bool":
        lowered = raw.lower()
        if lowered in ("1", "yes", "true", "on"):
            return True
        if lowered in ("0", "no", "false", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind == "floats":
        values = tuple(float(v) for v in raw.replace(";", ",").split(",") if v.strip())
        if not all(math.isfinite(v) for v in values):
            raise ValueError("must be finite")
        return values
    if kind == "profile":
        knots = []
        for item in raw.split(","):
            if not item.strip():
                continue
            frac, rel = item.split(":")
            knots.append((float(frac), float(rel)))
        return tuple(knots)
    return raw


def _read_section(parser, section: str, problems: list) -> dict:
    schema = _SCHEMA[section]
    values = {}
    if not parser.has_section(section):
        return {key: default for key, (_, _, default) in schema.items()}
    for key in parser[section]:
        if key not in schema:
            problems.append(f"[{section}] unknown key {key!r}")
    for key, (kind, required, default) in schema.items():
        if key in parser[section]:
            try:
                values[key] = _convert(kind, parser[section][key])
            except ValueError as exc:
                problems.append(f"[{section}] {key}: {exc}")
                values[key] = default
        else:
            if required:
                problems.append(f"[{section}] missing required key {key!r}")
            values[key] = default
    return values


def _parse_problems(exc: configparser.Error) -> list:
    if isinstance(exc, configparser.MissingSectionHeaderError):
        return [f"line {exc.lineno}: expected a [section] header before {exc.line.strip()!r}"]
    if isinstance(exc, configparser.ParsingError):
        # configparser stores the offending lines as repr() strings
        return [f"line {lineno}: cannot parse {ast.literal_eval(line).strip()!r}" for lineno, line in exc.errors]
    if isinstance(exc, (configparser.DuplicateOptionError, configparser.DuplicateSectionError)):
        what = f"key {exc.option!r}" if hasattr(exc, "option") else f"section [{exc.section}]"
        return [f"line {exc.lineno}: duplicate {what}"]
    return [f"parse error: {exc.message}"]


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    """Parse and validate scenario text."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ScenarioError(source, _parse_problems(exc)) from exc

    problems: list[str] = []
    for section in parser.sections():
        if section not in _SCHEMA:
            problems.append(f"unknown section [{section}]")
    if not parser.has_section("scenario"):
        raise ScenarioError(source, problems + ["missing required section [scenario]"])
    sc = _read_section(parser, "scenario", problems)
    mode = sc["mode"]
    if mode not in (CLOSED_LOOP, PLATOON):
        problems.append(f"[scenario] mode must be {CLOSED_LOOP!r} or {PLATOON!r}, got {mode!r}")

    needed = ["curve"] + (["plant", "controller"] if mode == CLOSED_LOOP else [])
    for section in needed:
        if not parser.has_section(section):
            problems.append(f"missing required section [{section}]")
    if problems:
        raise ScenarioError(source, problems)

    curve = _read_section(parser, "curve", problems)
    if curve["type"] not in _CURVE_TYPES:
        problems.append(f"[curve] type must be one of {_CURVE_TYPES}, got {curve['type']!r}")

    duration = sc["duration_s"]
    if duration is not None and duration < 0:
        problems.append("[scenario] duration_s must not be negative")
    for key in ("transient_cutoff_s", "metric_window_s"):
        if sc[key] is not None and not sc[key] > 0 and key == "metric_window_s":
            problems.append(f"[scenario] {key} must be positive")
        if sc[key] is not None and sc[key] < 0:
            problems.append(f"[scenario] {key} must not be negative")
    if sc["start"] not in ("origin", "on_curve"):
        problems.append(f"[scenario] start must be 'origin' or 'on_curve', got {sc['start']!r}")
    if sc["plant_method"] not in METHODS:
        problems.append(f"[scenario] plant_method must be one of {METHODS}")

    controller = platoon = None
    plant: dict = {}
    speeds: tuple = ()
    sim_dt = sc["sim_dt_s"]

    if mode == CLOSED_LOOP:
        plant = _read_section(parser, "plant", problems)
        _validate_plant(plant, problems)
        if sc["speeds_mps"] and sc["speeds_kmh"]:
            problems.append("[scenario] give speeds_mps or speeds_kmh, not both")
        if sc["speeds_mps"]:
            speeds = sc["speeds_mps"]
        elif sc["speeds_kmh"]:
            speeds = tuple(v / 3.6 for v in sc["speeds_kmh"])
        else:
            problems.append("[scenario] missing required key 'speeds_mps' (or 'speeds_kmh')")
        if any(not v > 0 for v in speeds):
            problems.append("[scenario] speeds must be positive")
        if sim_dt is None:
            problems.append("[scenario] missing required key 'sim_dt_s'")
        elif not sim_dt > 0:
            problems.append("[scenario] sim_dt_s must be positive")
        ctrl = _read_section(parser, "controller", problems)
        controller = _build_controller(ctrl, sim_dt, problems)
    else:
        pl = _read_section(parser, "platoon", problems)
        if curve["mean_speed_mps"] is None:
            problems.append("[curve] missing required key 'mean_speed_mps' for platoon mode")
        try:
            platoon = PlatoonConfig(
                n_robots=pl["n_robots"], d=pl["spacing_m"], l=pl["offset_m"], gamma=pl["gamma"],
                alpha=pl["alpha"], T=pl["horizon_s"], dt=pl["dt_s"], plant_method=sc["plant_method"],
                search_window=pl["search_window_s"])
        except (ValueError, TypeError) as exc:
            problems.append(f"[platoon] {exc}")
        sim_dt = platoon.dt if platoon is not None else sim_dt

    if not problems:
        try:
            build_curve(curve, speeds[0] if speeds else None)
            if plant:
                build_plant(plant)
        except (ValueError, TypeError) as exc:
            problems.append(str(exc))
    if problems:
        raise ScenarioError(source, problems)

    return Scenario(
        name=sc["name"], mode=mode, duration=duration, sim_dt=sim_dt, speeds=speeds, curve=curve,
        plant=plant, controller=controller, platoon=platoon,
        transient_cutoff=sc["transient_cutoff_s"], metric_window=sc["metric_window_s"],
        start=sc["start"], plant_method=sc["plant_method"], output_dir=sc["output_dir"],
        source=source,
    )


def _validate_plant(plant: dict, problems: list):
    kind = plant["type"]
    if kind not in _PLANT_TYPES:
        problems.append(f"[plant] type must be one of {_PLANT_TYPES}, got {kind!r}")
        return
    if kind == "bicycle":
        for key in ("mass_kg", "yaw_inertia_kgm2", "lf_m", "lr_m", "caf_n_per_rad", "car_n_per_rad"):
            if plant[key] is None:
                problems.append(f"[plant] missing required key {key!r} for bicycle")
            elif not plant[key] > 0:
                problems.append(f"[plant] {key} must be positive")
        if plant["jacobian"] not in ("analytic", "fd"):
            problems.append("[plant] jacobian must be 'analytic' or 'fd'")
    elif plant["dimension"] < 1:
        problems.append("[plant] dimension must be >= 1")


def _build_controller(ctrl: dict, sim_dt, problems: list) -> Optional[ControllerConfig]:
    if ctrl["singular_policy"] not in (FAIL, DAMPED):
        problems.append(f"[controller] singular_policy must be {FAIL!r} or {DAMPED!r}")
    if ctrl["predictor_method"] not in METHODS:
        problems.append(f"[controller] predictor_method must be one of {METHODS}")
    for key in ("alpha", "horizon_s", "predictor_dt_s"):
        if ctrl[key] is not None and not ctrl[key] > 0:
            problems.append(f"[controller] {key} must be positive")
    if problems:
        return None
    try:
        pred = PredictorConfig(T=ctrl["horizon_s"], dt=ctrl["predictor_dt_s"], method=ctrl["predictor_method"])
        u_init = np.array(ctrl["u_init"]) if ctrl["u_init"] else None
        return ControllerConfig(alpha=ctrl["alpha"], predictor=pred, controller_dt=sim_dt or 1.0,
                                u_init=u_init, singular_policy=ctrl["singular_policy"],
                                damping=ctrl["damping"])
    except ValueError as exc:
        problems.append(f"[controller] {exc}")
        return None


def build_plant(spec: dict) -> PlantModel:
    if spec["type"] == "bicycle":
        params = BicycleParams(m_kg=spec["mass_kg"], Iz=spec["yaw_inertia_kgm2"], lf=spec["lf_m"],
                               lr=spec["lr_m"], Caf=spec["caf_n_per_rad"], Car=spec["car_n_per_rad"])
        return bicycle_plant(params, jacobian=spec["jacobian"], v_min=spec["v_min_mps"])
    if spec["type"] == "integrator":
        return integrator_plant(spec["dimension"])
    raise ValueError(f"unknown plant type {spec['type']!r}")


def build_curve(spec: dict, speed: float | None = None) -> ReferenceCurve:
    """Curve from the [curve] settings; ``speed`` overrides ``mean_speed_mps`` where both apply."""
    kind = spec["type"]
    speed = speed if speed is not None else spec.get("mean_speed_mps")
    if speed is None:
        raise ValueError("curve needs a speed (speeds list or mean_speed_mps)")
    if kind == "lane_change":
        return LaneChangeCurve(speed)
    if kind == "closed_spline":
        pts = rounded_rectangle_points(spec["width_m"], spec["height_m"], spec["corner_radius_m"],
                                       spec["n_points"], (spec["center_x_m"], spec["center_y_m"]))
        return ClosedSplineCurve(pts, speed, speed_profile=spec["speed_profile"], clockwise=spec["clockwise"])
    if kind == "circle":
        return CircleCurve((spec["center_x_m"], spec["center_y_m"]), spec["radius_m"], speed)
    if kind == "line":
        ang = math.radians(spec["heading_deg"])
        return LineCurve((spec["center_x_m"], spec["center_y_m"]), (speed * math.cos(ang), speed * math.sin(ang)))
    raise ValueError(f"unknown curve type {kind!r}")


def resolve_scenario_path(path) -> Path:
    """``path`` itself if it exists, else a bundled scenario of that name."""
    p = Path(path)
    if p.exists():
        return p
    for candidate in (SCENARIO_DIR / p.name, SCENARIO_DIR / (p.name + ".scn")):
        if candidate.exists():
            return candidate
    return p


def load_scenario(path) -> Scenario:
    """Read and validate a scenario file (bundled names are resolved too)."""
    p = resolve_scenario_path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(path, [f"cannot read file: {exc}"]) from exc
    return parse_scenario(text, str(p))
