"""
Verification suites for the calibration estimator and the optimal plan.

This service handles:
- prop1: covariance, bias and sum MSE of the c-vector estimate under the optimal plan
- prop2: O(sigma^2) decay of the normal-vector bias
- prop3: O(sigma^2) decay of the gain bias
- theorem1: optimal radius, closed-form sum MSE, plan diagonality and optimality
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from .calibration_service import (
    calibration_sum_mse,
    circle_points,
    gram_for_points,
    optimal_radius,
    plan_optimal_points,
    planned_gram,
    planned_sum_mse,
    radius_sweep,
)
from .errors import ModelDomainError
from .simulation_service import (
    bias_slopes,
    default_scenario,
    mc_sum_mse_curve,
    optimality_search,
    run_calibration_mc,
)

logger = logging.getLogger(__name__)

PLAN_HEIGHT = 4.0
PLAN_COUNT = 5
BIAS_SIGMAS = (1e-4, 3e-4, 1e-3, 3e-3, 1e-2)
SUM_MSE_CONSTANT = 40.94
RADIUS_FRACTION = optimal_radius(1.0)


@dataclass(frozen=True)
class VerificationCheck:
    name: str
    measured: float
    expected: float
    tolerance: float
    passed: bool
    detail: str = ""


def _within(name: str, measured: float, expected: float, tolerance: float, detail: str = "") -> VerificationCheck:
    return VerificationCheck(name, float(measured), float(expected), tolerance, bool(abs(measured - expected) <= tolerance), detail)


def _at_most(name: str, measured: float, limit: float, detail: str = "") -> VerificationCheck:
    return VerificationCheck(name, float(measured), float(limit), 0.0, bool(measured <= limit), detail)


def verify_prop1(seed: int, trials: int = 100_000, workers: int = 1) -> List[VerificationCheck]:
    """Unbiased c-vector estimate whose covariance is sigma^2 (GG^T)^-1."""
    scenario = default_scenario(seed)
    plan = plan_optimal_points(scenario.leds[0].height, PLAN_COUNT)
    report = run_calibration_mc(scenario, plan, trials, [scenario.noise[0].sigma], seed, antithetic=False, workers=workers)
    entry = report.entries[0]
    standard_error = np.sqrt(np.diag(entry.empirical_covariance) / entry.trials)
    bias_in_se = float(np.max(np.abs(entry.c_vec_bias) / standard_error))
    return [
        _at_most("covariance_relative_deviation", entry.covariance_deviation, 0.05,
                 "max |C_emp - C_theory| / sqrt(C_ii C_jj)"),
        _at_most("bias_standard_errors", bias_in_se, 4.0, "max |mean - truth| / (std / sqrt(trials))"),
        _within("sum_mse_ratio", entry.sum_mse_ratio, 1.0, 0.05, "empirical / sigma^2 trace (GG^T)^-1"),
    ]


def _bias_report(seed: int, trials: int, workers: int):
    scenario = default_scenario(seed)
    plan = plan_optimal_points(scenario.leds[0].height, PLAN_COUNT)
    return run_calibration_mc(scenario, plan, trials, BIAS_SIGMAS, seed, antithetic=True, workers=workers)


def _prediction_ratio(measured: float, predicted: float) -> float:
    return measured / predicted if predicted else float("inf")


def verify_prop2(seed: int, trials: int = 10_000, workers: int = 1) -> List[VerificationCheck]:
    """Normal-vector bias decays as sigma^2."""
    report = _bias_report(seed, trials, workers)
    normal_slope, _ = bias_slopes(report)
    mid = report.entries[2]
    ratio = _prediction_ratio(np.linalg.norm(mid.normal_bias), np.linalg.norm(mid.predicted_normal_bias))
    return [
        _within("normal_bias_slope", normal_slope, 2.0, 0.3, "log-log slope of ||E[n_hat - n]|| against sigma"),
        _within("normal_bias_vs_leading_order", ratio, 1.0, 0.25, f"measured / predicted at sigma={mid.sigma:g}"),
    ]


def verify_prop3(seed: int, trials: int = 10_000, workers: int = 1) -> List[VerificationCheck]:
    """Gain bias decays as sigma^2."""
    report = _bias_report(seed, trials, workers)
    _, gain_slope = bias_slopes(report)
    mid = report.entries[2]
    ratio = _prediction_ratio(mid.gain_bias, mid.predicted_gain_bias)
    return [
        _within("gain_bias_slope", gain_slope, 2.0, 0.3, "log-log slope of |E[c_hat - c]| against sigma"),
        _within("gain_bias_vs_leading_order", ratio, 1.0, 0.25, f"measured / predicted at sigma={mid.sigma:g}"),
    ]


def verify_theorem1(seed: int, trials: int = 20_000, workers: int = 1, geometries: int = 1000) -> List[VerificationCheck]:
    """Optimal radius and sum MSE of the circular plan."""
    h, count, sigma2 = PLAN_HEIGHT, PLAN_COUNT, 1e-6
    r_star = optimal_radius(h)
    curve = radius_sweep(h, count, sigma2)
    radii, values = np.array(curve).T
    best = int(np.argmin(values))
    closed_form = SUM_MSE_CONSTANT * sigma2 * h**4 / count

    plan = plan_optimal_points(h, count)
    gram = gram_for_points(h, plan.points).GGt
    off_diagonal = np.max(np.abs(gram - np.diag(np.diag(gram)))) / np.trace(gram)
    equal_diagonal = abs(gram[0, 0] - gram[1, 1]) / gram[0, 0]
    closed_gram = np.max(np.abs(gram - planned_gram(h, count)) / np.max(np.abs(planned_gram(h, count))))
    planned = planned_sum_mse(h, count, sigma2)

    search = optimality_search(h, count, sigma2, geometries, seed)
    mc_curve = mc_sum_mse_curve(h, count, sigma2, [f * h for f in (0.2, 0.4, RADIUS_FRACTION, 0.8, 1.2)], trials, seed, workers)
    mc_deviation = max(abs(empirical / analytic - 1.0) for _, analytic, empirical in mc_curve)
    edges = min(
        calibration_sum_mse(gram_for_points(h, circle_points(0.1 * h, count)), sigma2),
        calibration_sum_mse(gram_for_points(h, circle_points(1.4 * h, count)), sigma2),
    )

    return [
        _within("sweep_argmin_relative", radii[best] / r_star - 1.0, 0.0, 0.02, f"argmin r = {radii[best]:.4f} m"),
        _within("sweep_min_relative", values[best] / closed_form - 1.0, 0.0, 0.005, "against 40.94 sigma^2 h^4 / N"),
        _within("planned_sum_mse_relative", planned / calibration_sum_mse(gram_for_points(h, plan.points), sigma2) - 1.0,
                0.0, 1e-10, "closed form against numeric GG^T"),
        _at_most("plan_off_diagonal", off_diagonal, 1e-12, "max |off-diagonal| / trace"),
        _at_most("plan_equal_diagonal", equal_diagonal, 1e-12, "|G_11 - G_22| / G_11"),
        _at_most("plan_closed_form_gram", closed_gram, 1e-10, "numeric GG^T against the closed form"),
        VerificationCheck(
            "random_geometries_not_better", search.best_random_sum_mse, search.planned_sum_mse, 1e-9,
            search.plan_is_optimal, f"{search.geometries - search.skipped} geometries searched",
        ),
        VerificationCheck("curve_above_minimum_at_edges", edges, planned, 0.0, bool(edges > planned),
                          "sum MSE at r = 0.1h and 1.4h"),
        _at_most("mc_curve_relative_deviation", mc_deviation, 0.05, "empirical / analytic at 5 radii"),
    ]


SUITES: Dict[str, Callable[..., List[VerificationCheck]]] = {
    "prop1": verify_prop1,
    "prop2": verify_prop2,
    "prop3": verify_prop3,
    "theorem1": verify_theorem1,
}


def run_suite(name: str, seed: int, trials: Optional[int] = None, workers: int = 1) -> List[VerificationCheck]:
    if name not in SUITES:
        raise ModelDomainError(f"unknown suite '{name}'. Available: {', '.join(SUITES)}")
    logger.info("🔧 Running verification suite %s (seed=%d)", name, seed)
    kwargs = {"workers": workers}
    if trials is not None:
        kwargs["trials"] = trials
    checks = SUITES[name](seed, **kwargs)
    failed = [c.name for c in checks if not c.passed]
    if failed:
        logger.info("✗ Suite %s: %d/%d checks failed (%s)", name, len(failed), len(checks), ", ".join(failed))
    else:
        logger.info("✓ Suite %s: all %d checks passed", name, len(checks))
    return checks
