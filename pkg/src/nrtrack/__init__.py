"""Tracking control by a speeded-up Newton-Raphson flow on a predicted output."""

from .controller import (
    ControllerConfig,
    SimTrace,
    SimulationAborted,
    run_closed_loop,
    run_memoryless,
    stability_sweep,
)
from .odeint import StepConfig, integrate
from .platoon import PlatoonConfig, run_platoon
from .plants import (
    CLOSED_CURVE_VEHICLE,
    LANE_CHANGE_VEHICLE,
    BicycleParams,
    bicycle_plant,
    integrator_plant,
    kinematic_point_plant,
    linear_plant,
    unicycle_plant,
)
from .predictor import PredictorConfig, fd_jacobian, predict, predict_with_jacobian
from .reference import (
    CircleCurve,
    ClosedSplineCurve,
    FunctionCurve,
    LaneChangeCurve,
    LineCurve,
    nearest_point,
)
from .scenario import Scenario, ScenarioError, load_scenario

__version__ = "0.1.0"

__all__ = [
    "BicycleParams", "CLOSED_CURVE_VEHICLE", "CircleCurve", "ClosedSplineCurve", "ControllerConfig",
    "FunctionCurve", "LANE_CHANGE_VEHICLE", "LaneChangeCurve", "LineCurve", "PlatoonConfig",
    "PredictorConfig", "Scenario", "ScenarioError", "SimTrace", "SimulationAborted", "StepConfig",
    "bicycle_plant", "fd_jacobian", "integrate", "integrator_plant", "kinematic_point_plant",
    "linear_plant", "load_scenario", "nearest_point", "predict", "predict_with_jacobian",
    "run_closed_loop", "run_memoryless", "run_platoon", "stability_sweep", "unicycle_plant",
]
