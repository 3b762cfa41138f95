"""Tool server (``vlp-calib-mcp``) exposing calibration planning, calibration and localization over stdio."""

import json
import logging
import sys
from typing import Annotated, List, Optional

import numpy as np
from mcp.server.fastmcp import FastMCP
from pydantic import Field

from .config import get_settings
from .prompts import load_prompts
from .services.calibration_service import CalibrationSet, calibrate, plan_optimal_points, planned_sum_mse, radius_sweep
from .services.errors import VlpError
from .services.localization_service import LocalizationProblem, SolverOptions, crlb_xy, multilaterate, solve_weighted_ls
from .services.report_formatter import LedCalibrationRecord, TableFormatter, dump_calibration
from .services.scenario_service import get_scenario_catalog

logger = logging.getLogger(__name__)

# Initialize services
logger.info("🔧 Starting service initialization...")

try:
    logger.info("🔍 Loading bundled scenarios...")
    scenario_catalog = get_scenario_catalog()
    logger.info("✓ Scenario catalog loaded: %s", ", ".join(scenario_catalog.list_scenarios()))
except Exception as e:
    logger.error("✗ Scenario catalog failed to load: %s", e)
    scenario_catalog = None

logger.info("🏁 Service initialization complete")

mcp = FastMCP("VLP calibration and localization")

load_prompts(mcp)


def _calibrations(records_json: str):
    raw = json.loads(records_json)
    if isinstance(raw, dict):
        raw = [raw]
    return [LedCalibrationRecord.model_validate(item).to_calibration() for item in raw]


@mcp.tool(
    name="plan-calibration",
    description="Optimal calibration points for one LED: N points evenly spaced on a ground circle of radius ~0.55h centred under the LED. Returns the points in room coordinates and the predicted sum MSE of the tilt/gain estimate."
)
def plan_calibration(
    height: Annotated[float, Field(description="LED height above the ground in meters")],
    count: Annotated[int, Field(description="Number of calibration points N (at least 3)")],
    led_x: Annotated[float, Field(description="LED x coordinate in meters")] = 0.0,
    led_y: Annotated[float, Field(description="LED y coordinate in meters")] = 0.0,
    sigma2: Annotated[float, Field(description="RSS noise variance, used for the predicted sum MSE")] = 1e-8,
) -> str:
    try:
        plan = plan_optimal_points(height, count)
        points = plan.world_points((led_x, led_y))
        result = f"# Calibration plan: {count} points\n\n"
        result += f"**Radius:** {plan.radius:.6g} m ({plan.radius / height:.6f} h)\n\n"
        result += f"**Predicted sum MSE:** {planned_sum_mse(height, count, sigma2):.6g}\n\n"
        result += TableFormatter.format_table([(i, p[0], p[1]) for i, p in enumerate(points)], ["index", "x", "y"])
        return result
    except VlpError as e:
        return f"Cannot plan calibration: {e}"


@mcp.tool(
    name="calibrate-led",
    description="Estimate the tilt, gain and noise variance of one LED from RSS samples taken by a horizontal photodiode on the ground. Returns a summary and the JSON calibration record used by localize and crlb."
)
def calibrate_led(
    led_position: Annotated[List[float], Field(description="LED position [x, y, z] in meters")],
    points: Annotated[List[List[float]], Field(description="Ground sample positions [[x, y], ...] in meters")],
    rss: Annotated[List[float], Field(description="RSS reading at each sample position")],
) -> str:
    try:
        cal = calibrate(CalibrationSet(np.array(led_position), np.array(points), np.array(rss)))
        polar, azimuth = cal.tilt_deg
        result = "# LED calibration\n\n"
        result += f"**Gain:** {cal.gain_hat:.8g}\n"
        result += f"**Tilt:** polar {polar:.4f} deg, azimuth {azimuth:.2f} deg\n"
        result += f"**Noise variance:** {cal.sigma2_hat:.4g} from {cal.sample_count} samples\n\n"
        result += f"```json\n{dump_calibration(cal)}```"
        return result
    except VlpError as e:
        return f"Calibration failed: {e}"


@mcp.tool(
    name="localize",
    description="Estimate the ground position of a receiver from one RSS reading per LED, given the LEDs' calibration records. Method 'wls' uses the residual-error-aware weighted LS; 'multilateration' ignores tilt."
)
def localize(
    calibrations: Annotated[str, Field(description="JSON list of calibration records from calibrate-led, in RSS order")],
    rss: Annotated[List[float], Field(description="One RSS reading per LED")],
    method: Annotated[str, Field(description="'wls' or 'multilateration'")] = "wls",
) -> str:
    try:
        problem = LocalizationProblem(_calibrations(calibrations), np.array(rss))
        if method == "multilateration":
            estimate = multilaterate(problem)
        elif method == "wls":
            settings = get_settings()
            estimate = solve_weighted_ls(problem, SolverOptions(grad_tol=settings.grad_tol, max_iters=settings.max_iters))
        else:
            return f"Unknown method '{method}'. Available: wls, multilateration"
        status = "converged" if estimate.converged else "did not converge"
        return (
            f"**Position:** x = {estimate.xy[0]:.4f} m, y = {estimate.xy[1]:.4f} m\n\n"
            f"*{estimate.method_tag}, {estimate.iterations} iterations, {status}*"
        )
    except (VlpError, ValueError) as e:
        return f"Localization failed: {e}"


@mcp.tool(
    name="crlb",
    description="Cramer-Rao lower bound on the x-y localization error at a ground position, given the LEDs' calibration records. Accounts for both measurement noise and residual calibration error."
)
def crlb(
    calibrations: Annotated[str, Field(description="JSON list of calibration records from calibrate-led")],
    x: Annotated[float, Field(description="Ground x coordinate in meters")],
    y: Annotated[float, Field(description="Ground y coordinate in meters")],
) -> str:
    try:
        cals = _calibrations(calibrations)
        report = crlb_xy(LocalizationProblem(cals, np.zeros(len(cals))), (x, y))
        return f"**CRLB at ({x:g}, {y:g}):** {report.crlb_xy:.6g} m"
    except (VlpError, ValueError) as e:
        return f"Cannot compute the bound: {e}"


@mcp.tool(
    name="sweep-radius",
    description="Sum MSE of the tilt/gain estimate against the calibration circle radius, for N evenly spaced points below an LED at height h. The minimum sits near 0.55h."
)
def sweep_radius(
    height: Annotated[float, Field(description="LED height in meters")],
    count: Annotated[int, Field(description="Number of calibration points N")],
    sigma2: Annotated[float, Field(description="RSS noise variance")] = 1e-8,
    step: Annotated[Optional[float], Field(description="Radius step in meters (default 0.05h)")] = None,
) -> str:
    try:
        step = 0.05 * height if step is None else step
        radii = np.arange(1, int(1.5 * height / step) + 1) * step
        curve = radius_sweep(height, count, sigma2, radii)
        best = min(curve, key=lambda point: point[1])
        result = f"**Minimum:** sum MSE {best[1]:.6g} at radius {best[0]:.4g} m\n\n"
        result += TableFormatter.format_table(curve, ["radius", "sum_mse"])
        return result
    except (VlpError, ValueError) as e:
        return f"Cannot sweep: {e}"


@mcp.tool(
    name="list-scenarios",
    description="List the bundled room scenarios (LED positions, tilts and noise levels) available to the simulator."
)
def list_scenarios() -> str:
    if scenario_catalog is None:
        return "Error: scenario catalog failed to initialize."
    result = "**Bundled scenarios:**\n\n"
    for name in scenario_catalog.list_scenarios():
        scenario = scenario_catalog.get_scenario(name)
        result += f"**{name}** - {scenario.room_width:g} x {scenario.room_depth:g} m room, {len(scenario.leds)} LEDs\n"
        for i, led in enumerate(scenario.leds):
            result += (
                f"  - LED {i}: position {np.round(led.position, 4).tolist()}, "
                f"tilt {led.tilt_polar_deg:g} deg, sigma {scenario.noise[i].sigma:g}\n"
            )
        result += "\n"
    return result


def main():
    logging.basicConfig(stream=sys.stderr, level=get_settings().log_level.upper(), format="%(message)s")
    mcp.run()


if __name__ == "__main__":
    main()
