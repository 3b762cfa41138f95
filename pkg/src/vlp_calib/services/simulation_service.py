"""
Simulation service.

This service handles:
- The default 8 m x 8 m scenario and noisy RSS generation
- Monte Carlo checks of the calibration estimator (covariance, bias, sum MSE)
- The localization experiment (weighted LS, GP, multilateration) with CRLB per point
- Replay of a measured dataset with seeded calibration subsets
- Error statistics: Euclidean error, P50/P99, empirical CDF, improvement rate

Every random draw comes from a stream keyed by (master seed, purpose, trial,
LED, ...), so reports are identical for any worker count.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .calibration_service import (
    CalibrationPlan,
    CalibrationSet,
    LedCalibration,
    calibrate,
    calibration_covariance,
    calibration_sum_mse,
    circle_points,
    gram_for_points,
    leading_order_bias,
    plan_optimal_points,
    random_ground_geometry,
)
from .channel_model import LedGroundTruth, NoiseSpec, PdPose, gaussian_draws, noise_generator, rss_general
from .dataset_service import SUBSET_STREAM, MeasurementRecord, as_arrays, sample_subset
from .errors import ModelDomainError, SingularGeometryError, VlpError
from .gp_service import HyperGrid, gp_fit, predict_many
from .localization_service import (
    LocalizationProblem,
    SolverOptions,
    crlb_xy,
    multilaterate,
    solve_weighted_ls,
)
from .scenario_service import Scenario, ScenarioDocument, build_scenario

logger = logging.getLogger(__name__)

METHODS = ("weighted_ls", "gp", "multilateration")
METHOD_ALIASES = {"wls": "weighted_ls", "weighted_ls": "weighted_ls", "gp": "gp", "multilateration": "multilateration"}
TRAINING_SIZES = (9, 16, 25, 36, 49, 64)

MC_CHUNK = 10_000
CALIBRATION_STREAM = 1
TEST_STREAM = 2
MC_STREAM = 3
GEOMETRY_STREAM = 5


def normalise_methods(methods: Iterable[str]) -> List[str]:
    """Canonical method names in a fixed order (weighted_ls, gp, multilateration)."""
    requested = set()
    for method in methods:
        key = method.strip().lower()
        if key not in METHOD_ALIASES:
            raise ModelDomainError(f"unknown method '{method}'. Available: wls, gp, multilateration")
        requested.add(METHOD_ALIASES[key])
    return [m for m in METHODS if m in requested]


def _map(func: Callable, items: Sequence, workers: int) -> List:
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


# Error statistics


@dataclass(frozen=True, eq=False)
class ErrorStats:
    per_point_errors: NDArray[np.float64]
    p50: float
    p99: float
    cdf: List[Tuple[float, float]]
    rmse: float
    improvement_rate_vs: Optional[float] = None

    @property
    def count(self) -> int:
        return len(self.per_point_errors)


def euclidean_error(estimate: ArrayLike, truth: ArrayLike) -> float:
    diff = np.asarray(estimate, dtype=float)[:2] - np.asarray(truth, dtype=float)[:2]
    return float(np.hypot(diff[0], diff[1]))


def percentiles_and_cdf(errors: ArrayLike) -> ErrorStats:
    """P50/P99 by linear interpolation between order statistics, plus the empirical CDF."""
    values = np.asarray(errors, dtype=float).reshape(-1)
    if values.size == 0:
        raise ModelDomainError("error statistics need at least one error value")
    ordered = np.sort(values)
    fractions = np.arange(1, len(ordered) + 1) / len(ordered)
    return ErrorStats(
        per_point_errors=values,
        p50=float(np.percentile(values, 50, method="linear")),
        p99=float(np.percentile(values, 99, method="linear")),
        cdf=[(float(e), float(f)) for e, f in zip(ordered, fractions)],
        rmse=float(np.sqrt(np.mean(values**2))),
    )


def improvement_rate(reference_ep: float, candidate_ep: float) -> float:
    """(reference - candidate) / reference, as a fraction."""
    if not reference_ep > 0:
        raise ModelDomainError(f"reference error must be positive, got {reference_ep}")
    return (reference_ep - candidate_ep) / reference_ep


# Scenario helpers


def default_scenario(seed: Optional[int] = None) -> Scenario:
    """The 8 m x 8 m, 4-LED set-up; azimuths drawn from ``seed``."""
    document = ScenarioDocument() if seed is None else ScenarioDocument(seed=seed)
    return build_scenario(document)


def noiseless_rss(leds: Sequence[LedGroundTruth], points: ArrayLike) -> NDArray[np.float64]:
    """K x L matrix of noiseless RSS at ground points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return np.array([[rss_general(led, PdPose.on_ground(p[0], p[1])) for led in leds] for p in points])


def _noisy(clean: NDArray[np.float64], sigmas: Sequence[float], seed: int, stream: int, trial: int) -> NDArray[np.float64]:
    """Add per-LED noise to a K x L matrix; column l uses stream (stream, trial, l)."""
    noisy = clean.copy()
    for l, sigma in enumerate(sigmas):
        noisy[:, l] += gaussian_draws(NoiseSpec(sigma, seed), (stream, trial, l), len(clean))
    return noisy


def calibrate_leds(
    led_positions: Sequence[ArrayLike], points: ArrayLike, rss_matrix: ArrayLike
) -> List[LedCalibration]:
    """Calibrate every LED from one shared set of ground samples (K x L readings)."""
    points = np.asarray(points, dtype=float)
    rss_matrix = np.asarray(rss_matrix, dtype=float)
    return [
        calibrate(CalibrationSet(led_position=np.asarray(pos, dtype=float), pd_positions=points, rss=rss_matrix[:, l]))
        for l, pos in enumerate(led_positions)
    ]


# Calibration Monte Carlo


@dataclass(frozen=True, eq=False)
class CalibrationMcEntry:
    sigma: float
    trials: int
    true_c_vec: NDArray[np.float64]
    mean_c_vec: NDArray[np.float64]
    empirical_covariance: NDArray[np.float64]
    theoretical_covariance: NDArray[np.float64]
    normal_bias: NDArray[np.float64]
    gain_bias: float
    predicted_normal_bias: NDArray[np.float64]
    predicted_gain_bias: float
    empirical_sum_mse: float
    theoretical_sum_mse: float

    @property
    def c_vec_bias(self) -> NDArray[np.float64]:
        return self.mean_c_vec - self.true_c_vec

    @property
    def sum_mse_ratio(self) -> float:
        return self.empirical_sum_mse / self.theoretical_sum_mse

    @property
    def covariance_deviation(self) -> float:
        """Largest |empirical - theoretical| element, relative to sqrt(C_ii C_jj)."""
        scale = np.sqrt(np.outer(np.diag(self.theoretical_covariance), np.diag(self.theoretical_covariance)))
        return float(np.max(np.abs(self.empirical_covariance - self.theoretical_covariance) / scale))


@dataclass(frozen=True)
class CalibrationMcReport:
    led_index: int
    plan: CalibrationPlan
    entries: List[CalibrationMcEntry] = field(default_factory=list)


@dataclass(frozen=True)
class _McMoments:
    count: int
    sum_c: NDArray[np.float64]
    sum_outer: NDArray[np.float64]
    sum_normal: NDArray[np.float64]
    sum_gain: float
    sum_sq_error: float


def _mc_chunk(task, clean: NDArray[np.float64], estimator: NDArray[np.float64], true_c: NDArray[np.float64],
              sigma: float, seed: int, antithetic: bool) -> _McMoments:
    key, size = task
    draws = size // 2 if antithetic else size
    noise = gaussian_draws(NoiseSpec(sigma, seed), key, (draws, len(clean)))
    if antithetic:
        noise = np.vstack([noise, -noise])
    c_hat = (clean + noise) @ estimator.T
    gains = np.linalg.norm(c_hat, axis=1)
    err = c_hat - true_c
    return _McMoments(
        count=len(c_hat),
        sum_c=c_hat.sum(axis=0),
        sum_outer=err.T @ err,
        sum_normal=(c_hat / gains[:, None]).sum(axis=0),
        sum_gain=float(gains.sum()),
        sum_sq_error=float(np.sum(err**2)),
    )


def _mc_moments(clean, estimator, true_c, sigma, seed, key_prefix, trials, antithetic, workers) -> _McMoments:
    tasks = []
    remaining, chunk = trials, 0
    while remaining > 0:
        size = min(MC_CHUNK, remaining)
        tasks.append(((*key_prefix, chunk), size))
        remaining -= size
        chunk += 1
    parts = _map(
        partial(_mc_chunk, clean=clean, estimator=estimator, true_c=true_c, sigma=sigma, seed=seed,
                antithetic=antithetic),
        tasks, workers,
    )
    return _McMoments(
        count=sum(p.count for p in parts),
        sum_c=sum(p.sum_c for p in parts),
        sum_outer=sum(p.sum_outer for p in parts),
        sum_normal=sum(p.sum_normal for p in parts),
        sum_gain=sum(p.sum_gain for p in parts),
        sum_sq_error=sum(p.sum_sq_error for p in parts),
    )


def run_calibration_mc(
    scenario: Scenario,
    plan: CalibrationPlan,
    trials: int,
    sigmas: Sequence[float],
    seed: Optional[int] = None,
    led_index: int = 0,
    antithetic: bool = True,
    workers: int = 1,
) -> CalibrationMcReport:
    """Empirical mean, covariance, bias and sum MSE of the calibration estimator per sigma.

    With ``antithetic`` each noise draw is paired with its negation; odd-order
    noise terms cancel in the means, so O(sigma^2) biases stay measurable at
    small sigma.
    """
    if trials < 2:
        raise ModelDomainError(f"Monte Carlo needs at least 2 trials, got {trials}")
    seed = scenario.seed if seed is None else seed
    led = scenario.leds[led_index]
    if abs(led.height - plan.led_height) > 1e-9:
        raise ModelDomainError(f"plan height {plan.led_height} does not match LED height {led.height}")
    points = plan.world_points(led.position[:2])
    clean = np.array([rss_general(led, PdPose(position=p)) for p in points])
    gram = gram_for_points(led.height, plan.points)
    estimator = np.linalg.solve(gram.GGt, gram.G)
    true_c = led.gain * led.normal

    entries = []
    for index, sigma in enumerate(sigmas):
        logger.info("🔍 Calibration Monte Carlo: sigma=%.3g, %d trials", sigma, trials)
        m = _mc_moments(clean, estimator, true_c, sigma, seed, (MC_STREAM, led_index, index), trials, antithetic, workers)
        mean_c = m.sum_c / m.count
        mean_err = mean_c - true_c
        covariance = (m.sum_outer - m.count * np.outer(mean_err, mean_err)) / (m.count - 1)
        theory = calibration_covariance(gram, sigma**2)
        predicted_normal_bias, predicted_gain_bias = leading_order_bias(true_c, theory)
        entries.append(CalibrationMcEntry(
            sigma=float(sigma),
            trials=m.count,
            true_c_vec=true_c,
            mean_c_vec=mean_c,
            empirical_covariance=covariance,
            theoretical_covariance=theory,
            normal_bias=m.sum_normal / m.count - led.normal,
            gain_bias=m.sum_gain / m.count - led.gain,
            predicted_normal_bias=predicted_normal_bias,
            predicted_gain_bias=predicted_gain_bias,
            empirical_sum_mse=m.sum_sq_error / m.count,
            theoretical_sum_mse=calibration_sum_mse(gram, sigma**2),
        ))
    return CalibrationMcReport(led_index=led_index, plan=plan, entries=entries)


def bias_slopes(report: CalibrationMcReport) -> Tuple[float, float]:
    """Log-log slopes of ||normal bias|| and |gain bias| against sigma."""
    sigmas = np.log([e.sigma for e in report.entries])
    normal = np.log([np.linalg.norm(e.normal_bias) for e in report.entries])
    gain = np.log([abs(e.gain_bias) for e in report.entries])
    return float(np.polyfit(sigmas, normal, 1)[0]), float(np.polyfit(sigmas, gain, 1)[0])


def mc_sum_mse_curve(
    h: float, count: int, sigma2: float, radii: Sequence[float], trials: int, seed: int, workers: int = 1
) -> List[Tuple[float, float, float]]:
    """(radius, analytic sum MSE, empirical sum MSE) for a zero-tilt, unit-gain LED."""
    led = LedGroundTruth(position=np.array([0.0, 0.0, h]), normal=np.array([0.0, 0.0, -1.0]))
    curve = []
    for index, radius in enumerate(radii):
        points = circle_points(float(radius), count)
        gram = gram_for_points(h, points)
        clean = np.array([rss_general(led, PdPose(position=p)) for p in points])
        m = _mc_moments(
            clean, np.linalg.solve(gram.GGt, gram.G), led.gain * led.normal, float(np.sqrt(sigma2)), seed,
            (MC_STREAM, 0xF16, index), trials, False, workers,
        )
        curve.append((float(radius), calibration_sum_mse(gram, sigma2), m.sum_sq_error / m.count))
    return curve


@dataclass(frozen=True)
class OptimalitySearchResult:
    planned_sum_mse: float
    best_random_sum_mse: float
    geometries: int
    skipped: int

    @property
    def plan_is_optimal(self) -> bool:
        return self.best_random_sum_mse >= self.planned_sum_mse * (1.0 - 1e-9)


def optimality_search(h: float, count: int, sigma2: float, geometries: int, seed: int) -> OptimalitySearchResult:
    """Random same-N ground geometries against the planned sum MSE."""
    rng = noise_generator(seed, (GEOMETRY_STREAM, count))
    planned = calibration_sum_mse(gram_for_points(h, plan_optimal_points(h, count).points), sigma2)
    best, skipped = np.inf, 0
    for _ in range(geometries):
        try:
            value = calibration_sum_mse(gram_for_points(h, random_ground_geometry(h, count, rng)), sigma2)
        except (SingularGeometryError, ModelDomainError):
            skipped += 1
            continue
        best = min(best, value)
    return OptimalitySearchResult(planned, float(best), geometries, skipped)


# Localization experiment


@dataclass(frozen=True, eq=False)
class CrlbPoint:
    point_id: int
    x: float
    y: float
    crlb_xy: float
    wls_rmse: float


@dataclass(frozen=True, eq=False)
class LocalizationExperimentReport:
    methods: List[str]
    stats: Dict[str, ErrorStats]
    failures: Dict[str, int]
    crlb: List[CrlbPoint]
    trials: int
    training_size: int


@dataclass(frozen=True, eq=False)
class _TrialContext:
    led_positions: NDArray[np.float64]
    sigmas: Tuple[float, ...]
    seed: int
    methods: Tuple[str, ...]
    training_points: NDArray[np.float64]
    test_points: NDArray[np.float64]
    clean_training: NDArray[np.float64]
    clean_test: NDArray[np.float64]
    options: SolverOptions
    hyper_grid: Optional[HyperGrid]


def _localize_points(
    methods: Sequence[str],
    calibrations: Optional[List[LedCalibration]],
    gp_model,
    test_rss: NDArray[np.float64],
    options: SolverOptions,
) -> Dict[str, NDArray[np.float64]]:
    """K x 2 estimates per method; NaN rows where a method failed."""
    estimates = {m: np.full((len(test_rss), 2), np.nan) for m in methods}
    if "gp" in methods and gp_model is not None:
        estimates["gp"] = predict_many(gp_model, test_rss)[:, :2]
    if calibrations is None:
        return estimates
    for k, rss in enumerate(test_rss):
        problem = LocalizationProblem(calibrations, rss)
        if "weighted_ls" in methods:
            try:
                estimates["weighted_ls"][k] = solve_weighted_ls(problem, options).xy
            except VlpError as e:
                logger.debug("Weighted LS failed at test point %d: %s", k, e)
        if "multilateration" in methods:
            try:
                estimates["multilateration"][k] = multilaterate(problem).xy
            except VlpError as e:
                logger.debug("Multilateration failed at test point %d: %s", k, e)
    return estimates


def _fit_methods(methods, led_positions, training_points, training_rss, hyper_grid):
    calibrations, gp_model = None, None
    if {"weighted_ls", "multilateration"} & set(methods):
        try:
            calibrations = calibrate_leds(led_positions, training_points, training_rss)
        except VlpError as e:
            logger.warning("✗ Calibration failed: %s", e)
    if "gp" in methods:
        try:
            gp_model = gp_fit(training_rss, training_points[:, :2], hyper_grid)
        except VlpError as e:
            logger.warning("✗ GP fit failed: %s", e)
    return calibrations, gp_model


def _run_trial(trial: int, context: _TrialContext):
    training_rss = _noisy(context.clean_training, context.sigmas, context.seed, CALIBRATION_STREAM, trial)
    test_rss = _noisy(context.clean_test, context.sigmas, context.seed, TEST_STREAM, trial)
    calibrations, gp_model = _fit_methods(
        context.methods, context.led_positions, context.training_points, training_rss, context.hyper_grid
    )
    estimates = _localize_points(context.methods, calibrations, gp_model, test_rss, context.options)
    return estimates, calibrations


def _errors(estimates: NDArray[np.float64], truth: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.hypot(estimates[:, 0] - truth[:, 0], estimates[:, 1] - truth[:, 1])


def _stats_with_failures(errors: NDArray[np.float64]) -> Tuple[Optional[ErrorStats], int]:
    finite = errors[np.isfinite(errors)]
    failures = int(errors.size - finite.size)
    return (percentiles_and_cdf(finite) if finite.size else None), failures


def _attach_improvement(stats: Dict[str, ErrorStats]) -> Dict[str, ErrorStats]:
    """Improvement of each method's P50 over GP's P50."""
    if "gp" not in stats or stats["gp"] is None or stats["gp"].p50 <= 0:
        return stats
    reference = stats["gp"].p50
    return {
        m: (s if s is None else ErrorStats(s.per_point_errors, s.p50, s.p99, s.cdf, s.rmse,
                                           improvement_rate(reference, s.p50)))
        for m, s in stats.items()
    }


def _training_subset(points: NDArray[np.float64], size: Optional[int], seed: int) -> NDArray[np.float64]:
    if size is None or size == len(points):
        return points
    if not 3 <= size <= len(points):
        raise ModelDomainError(f"training size must be in 3..{len(points)}, got {size}")
    chosen = np.sort(noise_generator(seed, (SUBSET_STREAM,)).choice(len(points), size=size, replace=False))
    return points[chosen]


def run_localization_experiment(
    scenario: Scenario,
    methods: Iterable[str],
    training_size: Optional[int],
    trials: int,
    seed: Optional[int] = None,
    workers: int = 1,
    options: Optional[SolverOptions] = None,
    hyper_grid: Optional[HyperGrid] = None,
) -> LocalizationExperimentReport:
    """Calibrate from noisy training samples, localize every trajectory point with each method.

    Calibration and GP training are redrawn every trial; CRLB per point uses
    the first trial's calibrations.
    """
    methods = normalise_methods(methods)
    seed = scenario.seed if seed is None else seed
    options = options or SolverOptions()
    training = _training_subset(scenario.training_points, training_size, seed)
    training3 = np.column_stack([training, np.zeros(len(training))])
    test = scenario.trajectory
    context = _TrialContext(
        led_positions=np.array([led.position for led in scenario.leds]),
        sigmas=tuple(n.sigma for n in scenario.noise),
        seed=seed,
        methods=tuple(methods),
        training_points=training3,
        test_points=test,
        clean_training=noiseless_rss(scenario.leds, training),
        clean_test=noiseless_rss(scenario.leds, test),
        options=options,
        hyper_grid=hyper_grid,
    )
    logger.info(
        "🔧 Localization experiment: %d trials, %d test points, %d training points, methods=%s",
        trials, len(test), len(training), ",".join(methods),
    )
    results = _map(partial(_run_trial, context=context), list(range(trials)), workers)

    stats, failures = {}, {}
    for method in methods:
        errors = np.concatenate([_errors(estimates[method], test) for estimates, _ in results])
        stats[method], failures[method] = _stats_with_failures(errors)
    stats = _attach_improvement(stats)

    crlb_points = []
    first_calibrations = results[0][1] if results else None
    if first_calibrations is not None:
        if "weighted_ls" in methods:
            per_trial = np.array([_errors(estimates["weighted_ls"], test) for estimates, _ in results])
            with np.errstate(invalid="ignore"):
                rmse = np.sqrt(np.nanmean(per_trial**2, axis=0))
        else:
            rmse = np.full(len(test), np.nan)
        for k, point in enumerate(test):
            problem = LocalizationProblem(first_calibrations, context.clean_test[k])
            try:
                bound = crlb_xy(problem, np.array([point[0], point[1], 0.0])).crlb_xy
            except VlpError:
                bound = float("nan")
            crlb_points.append(CrlbPoint(k, float(point[0]), float(point[1]), bound, float(rmse[k])))
    logger.info("✓ Localization experiment complete")
    return LocalizationExperimentReport(methods, stats, failures, crlb_points, trials, len(training))


# Measured dataset replay


@dataclass(frozen=True, eq=False)
class DatasetDrawResult:
    draw: int
    stats: Dict[str, Optional[ErrorStats]]
    crlb_p50: float


@dataclass(frozen=True, eq=False)
class DatasetExperimentReport:
    methods: List[str]
    training_size: int
    draws: List[DatasetDrawResult]

    def pooled(self, method: str) -> Optional[ErrorStats]:
        """Error statistics over the test points of every draw."""
        rows = [d.stats[method] for d in self.draws if d.stats.get(method) is not None]
        if not rows:
            return None
        return percentiles_and_cdf(np.concatenate([s.per_point_errors for s in rows]))


def _dataset_draw(draw: int, records, led_positions, methods, training_size, seed, options, hyper_grid):
    subset, remainder = sample_subset(records, training_size, seed, draw=draw)
    train_points, train_rss = as_arrays(subset)
    test_points, test_rss = as_arrays(remainder)
    calibrations, gp_model = _fit_methods(methods, led_positions, train_points, train_rss, hyper_grid)
    estimates = _localize_points(methods, calibrations, gp_model, test_rss, options)
    stats = {m: _stats_with_failures(_errors(estimates[m], test_points))[0] for m in methods}
    crlb_values = []
    if calibrations is not None:
        for point, rss in zip(test_points, test_rss):
            try:
                crlb_values.append(crlb_xy(LocalizationProblem(calibrations, rss), point).crlb_xy)
            except VlpError:
                continue
    crlb_p50 = float(np.median(crlb_values)) if crlb_values else float("nan")
    return DatasetDrawResult(draw, _attach_improvement(stats), crlb_p50)


def run_dataset_experiment(
    records: Sequence[MeasurementRecord],
    scenario: Scenario,
    methods: Iterable[str],
    training_size: int,
    draws: int,
    seed: Optional[int] = None,
    workers: int = 1,
    options: Optional[SolverOptions] = None,
    hyper_grid: Optional[HyperGrid] = None,
) -> DatasetExperimentReport:
    """Each draw calibrates / trains on a seeded uniform subset and tests on the remaining points."""
    methods = normalise_methods(methods)
    seed = scenario.seed if seed is None else seed
    led_positions = np.array([led.position for led in scenario.leds])
    if len(records[0].rss) != len(led_positions):
        raise ModelDomainError(
            f"dataset has {len(records[0].rss)} RSS columns but the scenario has {len(led_positions)} LEDs"
        )
    logger.info("🔧 Dataset replay: %d draws of %d training points", draws, training_size)
    results = _map(
        partial(_dataset_draw, records=list(records), led_positions=led_positions, methods=methods,
                training_size=training_size, seed=seed, options=options or SolverOptions(), hyper_grid=hyper_grid),
        list(range(draws)), workers,
    )
    return DatasetExperimentReport(methods, training_size, results)


def training_size_sweep(
    records: Sequence[MeasurementRecord],
    scenario: Scenario,
    sizes: Sequence[int] = TRAINING_SIZES,
    draws: int = 50,
    seed: Optional[int] = None,
    workers: int = 1,
    methods: Iterable[str] = METHODS,
    options: Optional[SolverOptions] = None,
    hyper_grid: Optional[HyperGrid] = None,
) -> List[DatasetExperimentReport]:
    """One dataset replay per training size, all from the same master seed."""
    if not sizes:
        raise ModelDomainError("training size sweep needs at least one size")
    return [
        run_dataset_experiment(records, scenario, methods, size, draws, seed, workers, options, hyper_grid)
        for size in sizes
    ]
