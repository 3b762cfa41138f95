import numpy as np
import pytest

from vlp_calib.services.calibration_service import (
    CalibrationSet,
    build_gram,
    calibrate,
    calibration_covariance,
    calibration_sum_mse,
    circle_points,
    decompose,
    estimate_c_vector,
    estimate_noise_variance,
    default_sweep_radii,
    fit_no_tilt_gain,
    gram_for_points,
    leading_order_bias,
    optimal_radius,
    plan_optimal_points,
    planned_gram,
    planned_sum_mse,
    radius_sweep,
    random_ground_geometry,
)
from vlp_calib.services.channel_model import LedGroundTruth, NoiseSpec, gaussian_draws, noise_generator
from vlp_calib.services.errors import DegenerateEstimateError, ModelDomainError, SingularGeometryError

from conftest import clean_rss


def test_noiseless_recovery_over_random_geometries():
    rng = noise_generator(11, 0)
    worst_normal, worst_gain = 0.0, 0.0
    for _ in range(500):
        h = rng.uniform(1.0, 5.0)
        led = LedGroundTruth.from_tilt(
            [rng.uniform(-3, 3), rng.uniform(-3, 3), h], rng.uniform(0, 10), rng.uniform(0, 360),
            gain=rng.uniform(0.5, 2.0),
        )
        points = random_ground_geometry(h, int(rng.integers(4, 41)), rng) + np.r_[led.position[:2], 0.0]
        result = calibrate(CalibrationSet(led.position, points, clean_rss(led, points)))
        worst_normal = max(worst_normal, np.max(np.abs(result.normal_hat - led.normal)))
        worst_gain = max(worst_gain, abs(result.gain_hat - led.gain))
    assert worst_normal < 1e-9
    assert worst_gain < 1e-9


def test_noiseless_variance_is_zero(office_calibrations):
    for cal in office_calibrations:
        assert cal.sigma2_hat < 1e-25


def test_calibration_accepts_planar_points():
    led = LedGroundTruth.from_tilt([1.0, 1.0, 3.0], 2.0, 45.0)
    points = plan_optimal_points(3.0, 6).world_points([1.0, 1.0])
    result = calibrate(CalibrationSet(led.position, points[:, :2], clean_rss(led, points)))
    assert result.tilt_deg == pytest.approx((2.0, 45.0), abs=1e-8)
    assert result.sample_count == 6


def test_optimal_radius():
    assert optimal_radius(1.0) == pytest.approx(0.550251, abs=1e-6)
    assert optimal_radius(4.0) == pytest.approx(4 * 0.550251, abs=1e-5)


@pytest.mark.parametrize("count", [3, 5, 8, 20])
def test_plan_matches_closed_form_gram(count):
    h = 2.5
    plan = plan_optimal_points(h, count, phase=0.3)
    gram = gram_for_points(h, plan.points).GGt
    closed = planned_gram(h, count)
    assert np.max(np.abs(gram - closed)) <= 1e-10 * np.max(np.abs(closed))
    off_diagonal = np.abs(gram - np.diag(np.diag(gram)))
    assert off_diagonal.max() < 1e-12 * np.trace(gram)
    assert gram[0, 0] == pytest.approx(gram[1, 1], rel=1e-12)


def test_plan_radius_and_points():
    plan = plan_optimal_points(1.0, 4)
    assert np.linalg.norm(plan.points[:, :2], axis=1) == pytest.approx([0.550251] * 4, abs=1e-6)
    assert np.all(plan.points[:, 2] == 0.0)


def test_plan_needs_three_points():
    with pytest.raises(ModelDomainError):
        plan_optimal_points(1.0, 2)


def test_planned_sum_mse_constant():
    assert planned_sum_mse(4.0, 5, 1e-6) == pytest.approx(40.94e-6 * 256 / 5, rel=1e-3)
    assert planned_sum_mse(4.0, 5, 1e-6) == pytest.approx(2.096e-3, rel=1e-3)


def test_covariance_matches_closed_form_for_plan():
    h, count, sigma2 = 4.0, 5, 1e-8
    plan = plan_optimal_points(h, count)
    r2 = plan.radius**2
    expected = sigma2 * (h**2 + r2) ** 4 / h**2 * np.diag([2 / (count * r2), 2 / (count * r2), 1 / (count * h**2)])
    covariance = calibration_covariance(gram_for_points(h, plan.points), sigma2)
    assert covariance == pytest.approx(expected, rel=1e-10, abs=1e-30)


def test_sum_mse_scales_with_sigma2():
    gram = gram_for_points(3.0, circle_points(1.0, 7))
    assert calibration_sum_mse(gram, 4e-6) == pytest.approx(4 * calibration_sum_mse(gram, 1e-6), rel=1e-12)


def test_radius_sweep_minimum():
    h, count, sigma2 = 4.0, 5, 1e-6
    curve = np.array(radius_sweep(h, count, sigma2))
    assert len(curve) == len(default_sweep_radii(h)) == 146
    best = curve[np.argmin(curve[:, 1])]
    assert best[0] == pytest.approx(optimal_radius(h), rel=0.02)
    assert best[1] == pytest.approx(40.94 * sigma2 * h**4 / count, rel=0.005)
    planned = planned_sum_mse(h, count, sigma2)
    assert curve[np.isclose(curve[:, 0], 0.1 * h), 1][0] > planned
    assert curve[np.isclose(curve[:, 0], 1.4 * h), 1][0] > planned


def test_random_geometries_never_beat_plan():
    h, count, sigma2 = 4.0, 5, 1e-6
    planned = planned_sum_mse(h, count, sigma2)
    rng = noise_generator(3, 1)
    for _ in range(200):
        try:
            value = calibration_sum_mse(gram_for_points(h, random_ground_geometry(h, count, rng)), sigma2)
        except SingularGeometryError:
            continue
        assert value >= planned * (1 - 1e-9)


def test_collinear_samples_are_singular():
    points = np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
    with pytest.raises(SingularGeometryError):
        build_gram(CalibrationSet([0.0, 0.0, 2.0], points, np.ones(4)))


@pytest.mark.parametrize(
    "led,points,rss",
    [
        ([0.0, 0.0, 2.0], [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], [1.0, 1.0]),
        ([0.0, 0.0, -1.0], [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]], [1.0, 1.0, 1.0]),
        ([0.0, 0.0, 2.0], [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]], [1.0, 1.0, 1.0]),
        ([0.0, 0.0, 2.0], [[1.0, 0.0, 0.5], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]], [1.0, 1.0, 1.0]),
        ([0.0, 0.0, 2.0], [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]], [1.0, np.nan, 1.0]),
    ],
)
def test_invalid_calibration_sets(led, points, rss):
    with pytest.raises(ModelDomainError):
        CalibrationSet(led, np.array(points), np.array(rss))


def test_zero_c_vector_is_degenerate():
    with pytest.raises(DegenerateEstimateError):
        decompose([0.0, 0.0, 0.0])


def test_no_tilt_gain_exact_for_untilted_led():
    led = LedGroundTruth.from_tilt([0.0, 0.0, 3.0], 0.0, 0.0, gain=1.3)
    points = circle_points(1.5, 8)
    assert fit_no_tilt_gain(CalibrationSet(led.position, points, clean_rss(led, points))) == pytest.approx(1.3)


def test_leading_order_bias_for_untilted_led():
    covariance = np.diag([4e-6, 4e-6, 1e-6])
    normal_bias, gain_bias = leading_order_bias([0.0, 0.0, -2.0], covariance)
    # P removes z; tr(P cov) = 8e-6
    assert gain_bias == pytest.approx(8e-6 / 4.0)
    assert normal_bias == pytest.approx([0.0, 0.0, 0.5 * 8e-6 / 4.0], abs=1e-18)


def test_noise_variance_of_single_offset():
    gram = gram_for_points(3.0, circle_points(1.5, 6))
    c_vec = np.array([0.0, 0.0, -1.0])
    rss = gram.G.T @ c_vec
    rss[2] += 0.01
    assert estimate_noise_variance(gram, rss, c_vec) == pytest.approx(1e-4 / 6)


def test_noise_variance_carries_ml_bias():
    h, count, sigma = 4.0, 158, 1e-4
    points = random_ground_geometry(h, count, noise_generator(21, 0))
    gram = gram_for_points(h, points)
    clean = gram.G.T @ np.array([0.02, -0.01, -1.0])
    values = []
    for trial in range(500):
        rss = clean + gaussian_draws(NoiseSpec(sigma, 21), (trial,), count)
        values.append(estimate_noise_variance(gram, rss, estimate_c_vector(gram, rss)))
    assert np.mean(values) == pytest.approx(sigma**2 * (count - 3) / count, rel=0.05)
