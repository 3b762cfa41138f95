import numpy as np
import pytest

from vlp_calib.services.calibration_service import CalibrationSet, calibrate, plan_optimal_points
from vlp_calib.services.channel_model import LedGroundTruth, NoiseSpec, gaussian_draws, noise_generator
from vlp_calib.services.errors import ModelDomainError, SingularGeometryError, UnboundedCrlbError, UnlocatableError
from vlp_calib.services.localization_service import (
    LocalizationProblem,
    SolverOptions,
    crlb_xy,
    fim,
    grid_search,
    localize_many,
    multilaterate,
    predicted_rss,
    residual_error_variance,
    solve_weighted_ls,
    total_noise_variance,
    weighted_ls_objective,
)

from conftest import clean_rss

SIGMA2 = 1e-8


def _problem(calibrations, leds, xy, noise_seed=None, sigma=1e-4):
    point = np.array([[xy[0], xy[1], 0.0]])
    rss = np.array([clean_rss(led, point)[0] for led in leds])
    if noise_seed is not None:
        rss = rss + gaussian_draws(NoiseSpec(sigma, noise_seed), (0,), len(rss))
    return LocalizationProblem(calibrations, rss, noise_variances=[SIGMA2] * len(leds))


def _plan_calibration(h, count):
    led = LedGroundTruth.from_tilt([0.0, 0.0, h], 0.0, 0.0)
    points = plan_optimal_points(h, count).points
    return calibrate(CalibrationSet(led.position, points, clean_rss(led, points)))


def test_residual_variance_below_led_with_plan():
    cal = _plan_calibration(1.0, 6)
    expected = 1e-6 * (1 + 0.302776) ** 4 / 6
    assert residual_error_variance(cal, [0.0, 0.0], sigma2=1e-6) == pytest.approx(expected, rel=1e-5)
    assert total_noise_variance(cal, [0.0, 0.0], sigma2=1e-6) == pytest.approx(expected + 1e-6, rel=1e-5)


def test_residual_variance_shrinks_with_samples():
    few = residual_error_variance(_plan_calibration(2.0, 5), [0.7, -0.4], sigma2=1e-6)
    many = residual_error_variance(_plan_calibration(2.0, 100), [0.7, -0.4], sigma2=1e-6)
    assert many == pytest.approx(few * 5 / 100, rel=1e-9)


def test_predicted_rss_matches_truth(office_calibrations, office_leds):
    point = np.array([[0.4, 3.3, 0.0]])
    for cal, led in zip(office_calibrations, office_leds):
        assert predicted_rss(cal, point[:, :2])[0] == pytest.approx(clean_rss(led, point)[0], rel=1e-9)


def test_objective_vanishes_at_truth(office_calibrations, office_leds):
    problem = _problem(office_calibrations, office_leds, (0.5, 4.5))
    assert weighted_ls_objective(problem, (0.5, 4.5)) < 1e-12
    assert weighted_ls_objective(problem, (0.6, 4.5)) > 1.0


@pytest.mark.parametrize("xy", [(0.5, 4.5), (-2.7, 6.8), (1.1, 1.2), (0.0, 4.0)])
def test_solver_recovers_noiseless_position(office_calibrations, office_leds, xy):
    estimate = solve_weighted_ls(_problem(office_calibrations, office_leds, xy))
    assert estimate.method_tag == "weighted_ls"
    assert estimate.xy == pytest.approx(xy, abs=1e-6)


def test_solver_matches_grid_oracle(office_calibrations, office_leds):
    rng = noise_generator(5, 0)
    for instance in range(20):
        xy = (rng.uniform(-2.5, 2.5), rng.uniform(2.5, 6.5))
        problem = _problem(office_calibrations, office_leds, xy, noise_seed=instance)
        estimate = solve_weighted_ls(problem)
        x, y = estimate.xy
        window = ((x - 0.05, x + 0.05), (y - 0.05, y + 0.05))
        oracle, value = grid_search(problem, step=0.001, bounds=window)
        assert np.hypot(oracle[0] - x, oracle[1] - y) <= 0.002
        assert estimate.objective_value <= value * (1 + 1e-6) + 1e-12


def test_frozen_weights_still_localize(office_calibrations, office_leds):
    problem = _problem(office_calibrations, office_leds, (1.3, 5.1), noise_seed=1)
    exact = solve_weighted_ls(problem)
    frozen = solve_weighted_ls(problem, SolverOptions(freeze_weights=True))
    assert np.hypot(exact.xy[0] - frozen.xy[0], exact.xy[1] - frozen.xy[1]) < 0.01


def test_solver_needs_three_leds(office_calibrations, office_leds):
    problem = _problem(office_calibrations[:2], office_leds[:2], (0.0, 4.0))
    with pytest.raises(ModelDomainError):
        solve_weighted_ls(problem)


def test_nonpositive_rss_is_unlocatable(office_calibrations):
    problem = LocalizationProblem(office_calibrations, np.zeros(4), noise_variances=[SIGMA2] * 4)
    with pytest.raises(UnlocatableError):
        solve_weighted_ls(problem)
    with pytest.raises(UnlocatableError):
        multilaterate(problem)


def test_problem_validates_lengths(office_calibrations):
    with pytest.raises(ModelDomainError):
        LocalizationProblem(office_calibrations, np.ones(3))
    with pytest.raises(ModelDomainError):
        LocalizationProblem(office_calibrations, np.ones(4), noise_variances=[1e-8])


def test_multilateration_exact_without_tilt(ground_grid):
    leds = [LedGroundTruth.from_tilt(p, 0.0, 0.0) for p in [(-2, 6, 4), (2, 6, 4), (-2, 2, 4), (2, 2, 4)]]
    cals = [calibrate(CalibrationSet(led.position, ground_grid, clean_rss(led, ground_grid))) for led in leds]
    estimate = multilaterate(_problem(cals, leds, (0.7, 3.9)))
    assert estimate.method_tag == "multilateration"
    assert estimate.xy == pytest.approx((0.7, 3.9), abs=1e-6)


def test_multilateration_biased_by_tilt(office_calibrations, office_leds):
    problem = _problem(office_calibrations, office_leds, (0.7, 3.9))
    ml = multilaterate(problem)
    error = np.hypot(ml.xy[0] - 0.7, ml.xy[1] - 3.9)
    assert 1e-4 < error < 0.5


def test_multilateration_rejects_collinear_leds(ground_grid):
    leds = [LedGroundTruth.from_tilt(p, 0.0, 0.0) for p in [(-2, 4, 4), (0, 4, 4), (2, 4, 4)]]
    cals = [calibrate(CalibrationSet(led.position, ground_grid, clean_rss(led, ground_grid))) for led in leds]
    with pytest.raises(SingularGeometryError):
        multilaterate(_problem(cals, leds, (0.5, 3.0)))


def _finite_difference_fim(problem, point, step=1e-6):
    info = np.zeros((3, 3))
    for cal, sigma2 in zip(problem.calibrations, problem.sigma2):
        dmu, dvar = np.zeros(3), np.zeros(3)
        for axis in range(3):
            offset = np.zeros(3)
            offset[axis] = step
            dmu[axis] = (predicted_rss(cal, point + offset)[0] - predicted_rss(cal, point - offset)[0]) / (2 * step)
            dvar[axis] = (
                total_noise_variance(cal, point + offset, sigma2) - total_noise_variance(cal, point - offset, sigma2)
            ) / (2 * step)
        variance = total_noise_variance(cal, point, sigma2)
        info += np.outer(dmu, dmu) / variance + 0.5 * np.outer(dvar, dvar) / variance**2
    return info


def test_fim_matches_finite_differences(office_calibrations):
    problem = LocalizationProblem(office_calibrations, np.ones(4), noise_variances=[1e-6] * 4)
    rng = noise_generator(17, 0)
    for _ in range(100):
        point = np.array([rng.uniform(-3.5, 3.5), rng.uniform(0.5, 7.5), 0.0])
        analytic = fim(problem, point)
        numeric = _finite_difference_fim(problem, point)
        assert np.linalg.norm(analytic - numeric) <= 1e-4 * np.linalg.norm(analytic)


def test_crlb_scales_with_sigma_without_variance_term(office_calibrations):
    low = LocalizationProblem(office_calibrations, np.ones(4), noise_variances=[1e-8] * 4)
    high = LocalizationProblem(office_calibrations, np.ones(4), noise_variances=[4e-8] * 4)
    a = crlb_xy(low, (0.3, 4.2), include_variance_term=False).crlb_xy
    b = crlb_xy(high, (0.3, 4.2), include_variance_term=False).crlb_xy
    assert b == pytest.approx(2 * a, rel=1e-9)


def test_variance_term_tightens_bound(office_calibrations):
    problem = LocalizationProblem(office_calibrations, np.ones(4), noise_variances=[1e-8] * 4)
    full = crlb_xy(problem, (0.3, 4.2))
    mean_only = crlb_xy(problem, (0.3, 4.2), include_variance_term=False)
    assert full.crlb_xy <= mean_only.crlb_xy
    assert np.allclose(full.fim, full.fim.T)


def test_single_led_mean_term_is_unbounded(office_calibrations):
    problem = LocalizationProblem(office_calibrations[:1], np.ones(1), noise_variances=[1e-8])
    with pytest.raises(UnboundedCrlbError):
        crlb_xy(problem, (0.3, 4.2), include_variance_term=False)


def test_localize_many(office_calibrations, office_leds):
    truth = [(0.5, 4.5), (-1.0, 3.0)]
    rows = [clean_rss(led, np.array([[x, y, 0.0] for x, y in truth])) for led in office_leds]
    estimates = localize_many(office_calibrations, np.array(rows).T, noise_variances=[SIGMA2] * 4)
    for estimate, xy in zip(estimates, truth):
        assert estimate.xy == pytest.approx(xy, abs=1e-6)


def test_solver_converges_quickly_on_noisy_readings(office_calibrations, office_leds):
    for seed in range(30):
        estimate = solve_weighted_ls(_problem(office_calibrations, office_leds, (0.5, 4.5), noise_seed=seed))
        assert estimate.converged
        assert estimate.iterations <= 25
        assert estimate.weights == "iterate"


def test_solver_only_accepts_strict_decrease(office_calibrations, office_leds):
    problem = _problem(office_calibrations, office_leds, (0.5, 4.5), noise_seed=3)
    first = solve_weighted_ls(problem)
    again = solve_weighted_ls(problem, initial_xy=first.xy)
    assert again.converged
    assert again.iterations <= 2
    assert again.objective_value <= first.objective_value


def test_frozen_weights_report_frozen_objective(office_calibrations, office_leds):
    problem = _problem(office_calibrations, office_leds, (1.3, 5.1), noise_seed=1)
    start = multilaterate(problem).xy
    frozen = solve_weighted_ls(problem, SolverOptions(freeze_weights=True))
    assert frozen.weights == "frozen"
    expected = sum(
        (s - predicted_rss(cal, [frozen.xy])[0]) ** 2 / total_noise_variance(cal, start, SIGMA2)
        for cal, s in zip(office_calibrations, problem.rss)
    )
    assert frozen.objective_value == pytest.approx(expected, rel=1e-9)
    assert solve_weighted_ls(problem).objective_value == pytest.approx(
        weighted_ls_objective(problem, solve_weighted_ls(problem).xy)
    )


def test_crlb_uses_ground_plane_block(office_calibrations):
    problem = LocalizationProblem(office_calibrations, np.ones(4), noise_variances=[SIGMA2] * 4)
    report = crlb_xy(problem, (0.0, 1.0))
    assert report.fim.shape == (3, 3)
    planar = np.linalg.inv(report.fim[:2, :2])
    assert report.crlb_xy == pytest.approx(np.sqrt(planar[0, 0] + planar[1, 1]), rel=1e-9)
    assert np.all(report.covariance_bound[2] == 0.0)
    assert np.all(report.covariance_bound[:, 2] == 0.0)
    # z known can only tighten the bound
    full = np.linalg.inv(report.fim)
    assert report.crlb_xy <= np.sqrt(full[0, 0] + full[1, 1])
