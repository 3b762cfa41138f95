"""Services package for LED calibration and localization."""

from .calibration_service import CalibrationPlan, CalibrationSet, LedCalibration, calibrate, plan_optimal_points
from .channel_model import LedGroundTruth, NoiseSpec, PdPose
from .localization_service import LocalizationProblem, PositionEstimate, SolverOptions, crlb_xy, solve_weighted_ls
from .scenario_service import Scenario, get_scenario_catalog, resolve_scenario

__all__ = [
    'CalibrationPlan',
    'CalibrationSet',
    'LedCalibration',
    'calibrate',
    'plan_optimal_points',
    'LedGroundTruth',
    'NoiseSpec',
    'PdPose',
    'LocalizationProblem',
    'PositionEstimate',
    'SolverOptions',
    'crlb_xy',
    'solve_weighted_ls',
    'Scenario',
    'get_scenario_catalog',
    'resolve_scenario',
]
