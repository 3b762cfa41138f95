"""
Calibration service for per-LED tilt and gain estimation.

This service handles:
- Assembling the calibration Gram system from ground-plane RSS samples
- The closed-form pseudo-inverse estimate of c = c * n_S and its decomposition
- Noise variance (ML) and the theoretical covariance / sum MSE
- The optimal calibration plan: N points evenly spaced on a circle of radius
  r* = sqrt((sqrt(13) - 3) / 2) * h below the LED
- Radius sweeps of the sum MSE for plotting

All functions work in the LED-centred frame internally (only d = r_R - r_S
enters the model), so callers may pass world coordinates.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .channel_model import Vec3, as_vec3, normal_to_tilt
from .errors import DegenerateEstimateError, ModelDomainError, SingularGeometryError

logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1e12
RADIUS_FACTOR = math.sqrt((math.sqrt(13.0) - 3.0) / 2.0)
GROUND_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class CalibrationSet:
    """RSS samples of one LED taken by a horizontal PD on the ground."""
    led_position: Vec3
    pd_positions: NDArray[np.float64]
    rss: NDArray[np.float64]

    def __post_init__(self):
        led = as_vec3(self.led_position, "LED position")
        points = np.atleast_2d(np.asarray(self.pd_positions, dtype=float))
        rss = np.asarray(self.rss, dtype=float).reshape(-1)
        if points.shape[1] == 2:
            points = np.column_stack([points, np.zeros(len(points))])
        if points.ndim != 2 or points.shape[1] != 3:
            raise ModelDomainError(f"PD positions must be an N x 3 array, got shape {points.shape}")
        if len(points) != len(rss):
            raise ModelDomainError(f"{len(points)} PD positions but {len(rss)} RSS readings")
        if len(points) < 3:
            raise ModelDomainError(f"calibration needs at least 3 samples, got {len(points)}")
        if led[2] <= 0:
            raise ModelDomainError(f"LED height must be positive, got {led[2]}")
        if np.any(np.abs(points[:, 2]) > GROUND_TOLERANCE):
            raise ModelDomainError("calibration samples must lie on the ground plane (z = 0)")
        if not np.all(np.isfinite(points)) or not np.all(np.isfinite(rss)):
            raise ModelDomainError("calibration samples contain non-finite values")
        horizontal = np.hypot(points[:, 0] - led[0], points[:, 1] - led[1])
        if np.any(horizontal == 0.0):
            raise ModelDomainError("a calibration sample coincides with the LED ground projection")
        object.__setattr__(self, "led_position", led)
        object.__setattr__(self, "pd_positions", points)
        object.__setattr__(self, "rss", rss)

    @property
    def count(self) -> int:
        return len(self.rss)

    @property
    def height(self) -> float:
        return float(self.led_position[2])


@dataclass(frozen=True, eq=False)
class GramSystem:
    """G (3 x N, columns g_n = h/d_n^4 * d_n) and GG^T."""
    G: NDArray[np.float64]
    GGt: NDArray[np.float64]

    @property
    def inverse(self) -> NDArray[np.float64]:
        return np.linalg.inv(self.GGt)


@dataclass(frozen=True, eq=False)
class LedCalibration:
    """Estimated tilt, gain and noise variance of one LED plus the weighting matrix (GG^T)^-1."""
    led_position: Vec3
    c_vec: Vec3
    normal_hat: Vec3
    gain_hat: float
    sigma2_hat: float
    ggt_inverse: NDArray[np.float64]
    sample_count: int = 0
    no_tilt_gain: Optional[float] = None

    @property
    def height(self) -> float:
        return float(self.led_position[2])

    @property
    def tilt_deg(self) -> Tuple[float, float]:
        """(polar, azimuth) of the estimated normal, in degrees."""
        return normal_to_tilt(self.normal_hat)


@dataclass(frozen=True, eq=False)
class CalibrationPlan:
    """Optimal calibration points, LED-centred (LED projection at the origin)."""
    led_height: float
    count: int
    phase: float
    radius: float
    points: NDArray[np.float64]

    def world_points(self, led_xy: ArrayLike) -> NDArray[np.float64]:
        offset = np.zeros(3)
        offset[:2] = np.asarray(led_xy, dtype=float)[:2]
        return self.points + offset


def build_gram(calibration_set: CalibrationSet) -> GramSystem:
    """Assemble G and GG^T; refuse geometries that do not determine all three components."""
    h = calibration_set.height
    d = calibration_set.pd_positions - calibration_set.led_position
    dist = np.linalg.norm(d, axis=1)
    G = (h / dist**4)[np.newaxis, :] * d.T
    rank = np.linalg.matrix_rank(G)
    if rank < 3:
        raise SingularGeometryError(
            f"calibration geometry has rank {rank} < 3: samples are collinear with the LED projection"
        )
    GGt = G @ G.T
    _check_condition(GGt)
    return GramSystem(G=G, GGt=GGt)


def _check_condition(GGt: NDArray[np.float64]) -> None:
    cond = np.linalg.cond(GGt)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise SingularGeometryError(f"GG^T is ill-conditioned (condition number {cond:.3g})")


def estimate_c_vector(gram: GramSystem, rss: ArrayLike) -> Vec3:
    """Pseudo-inverse estimate (GG^T)^-1 G s."""
    s = np.asarray(rss, dtype=float).reshape(-1)
    if s.shape[0] != gram.G.shape[1]:
        raise ModelDomainError(f"expected {gram.G.shape[1]} RSS readings, got {s.shape[0]}")
    _check_condition(gram.GGt)
    return np.linalg.solve(gram.GGt, gram.G @ s)


def decompose(c_vec: ArrayLike) -> Tuple[Vec3, float]:
    """Split c = c * n_S into the unit normal and the gain."""
    c_vec = as_vec3(c_vec, "c vector")
    gain = float(np.linalg.norm(c_vec))
    if gain == 0.0:
        raise DegenerateEstimateError("calibration failed: estimated c vector is zero")
    return c_vec / gain, gain


def estimate_noise_variance(gram: GramSystem, rss: ArrayLike, c_vec: ArrayLike) -> float:
    """ML noise variance (1/N) * ||s - G^T c||^2, without the N-3 correction."""
    s = np.asarray(rss, dtype=float).reshape(-1)
    residual = s - gram.G.T @ np.asarray(c_vec, dtype=float)
    return float(residual @ residual / len(s))


def calibration_covariance(gram: GramSystem, sigma2: float) -> NDArray[np.float64]:
    _check_condition(gram.GGt)
    return sigma2 * gram.inverse


def calibration_sum_mse(gram: GramSystem, sigma2: float) -> float:
    return float(np.trace(calibration_covariance(gram, sigma2)))


def leading_order_bias(c_vec: ArrayLike, covariance: ArrayLike) -> Tuple[Vec3, float]:
    """Second-order bias of the normal and gain estimates, E[n_hat - n] and E[c_hat - c].

    Both vanish as O(sigma^2); the gain bias is tr(P cov)/(2c) with P the
    projector orthogonal to n.
    """
    normal, gain = decompose(c_vec)
    cov = np.asarray(covariance, dtype=float)
    projector = np.eye(3) - np.outer(normal, normal)
    scaled = cov / gain**2
    normal_bias = -projector @ scaled @ normal - 0.5 * np.trace(projector @ scaled) * normal
    gain_bias = float(np.trace(projector @ cov) / (2.0 * gain))
    return normal_bias, gain_bias


def fit_no_tilt_gain(calibration_set: CalibrationSet) -> float:
    """LS gain under the no-tilt model s = c * h^2 / d^4 (multilateration baseline)."""
    h = calibration_set.height
    dist = np.linalg.norm(calibration_set.pd_positions - calibration_set.led_position, axis=1)
    q = h**2 / dist**4
    return float(q @ calibration_set.rss / (q @ q))


def calibrate(calibration_set: CalibrationSet) -> LedCalibration:
    """Stage 1: tilt, gain and noise variance for one LED."""
    gram = build_gram(calibration_set)
    c_vec = estimate_c_vector(gram, calibration_set.rss)
    normal_hat, gain_hat = decompose(c_vec)
    sigma2_hat = estimate_noise_variance(gram, calibration_set.rss, c_vec)
    logger.debug(
        "Calibrated LED at %s from %d samples: gain=%.6g sigma2=%.3g",
        calibration_set.led_position.tolist(), calibration_set.count, gain_hat, sigma2_hat,
    )
    return LedCalibration(
        led_position=calibration_set.led_position,
        c_vec=c_vec,
        normal_hat=normal_hat,
        gain_hat=gain_hat,
        sigma2_hat=sigma2_hat,
        ggt_inverse=gram.inverse,
        sample_count=calibration_set.count,
        no_tilt_gain=fit_no_tilt_gain(calibration_set),
    )


def optimal_radius(h: float) -> float:
    if not h > 0:
        raise ModelDomainError(f"LED height must be positive, got {h}")
    return RADIUS_FACTOR * h


def circle_points(radius: float, count: int, phase: float = 0.0) -> NDArray[np.float64]:
    angles = 2.0 * np.pi * np.arange(count) / count + phase
    return np.column_stack([radius * np.cos(angles), radius * np.sin(angles), np.zeros(count)])


def plan_optimal_points(h: float, count: int, phase: float = 0.0) -> CalibrationPlan:
    if count < 3:
        raise ModelDomainError(f"the optimal plan needs N >= 3 points, got {count}")
    radius = optimal_radius(h)
    return CalibrationPlan(
        led_height=h, count=count, phase=phase, radius=radius,
        points=circle_points(radius, count, phase),
    )


def planned_gram(h: float, count: int, radius: Optional[float] = None) -> NDArray[np.float64]:
    """Closed-form GG^T of N evenly spaced points on a circle (default radius r*)."""
    r = optimal_radius(h) if radius is None else radius
    return h**2 / (h**2 + r**2) ** 4 * np.diag([count * r**2 / 2, count * r**2 / 2, count * h**2])


def planned_sum_mse(h: float, count: int, sigma2: float, radius: Optional[float] = None) -> float:
    r = optimal_radius(h) if radius is None else radius
    return sigma2 * (h**2 + r**2) ** 4 / (count * h**2) * (4.0 / r**2 + 1.0 / h**2)


def gram_for_points(h: float, points: ArrayLike) -> GramSystem:
    """Gram system for LED-centred ground points (RSS values are irrelevant to G)."""
    points = np.asarray(points, dtype=float)
    placeholder = CalibrationSet(
        led_position=np.array([0.0, 0.0, h]), pd_positions=points, rss=np.zeros(len(points))
    )
    return build_gram(placeholder)


def default_sweep_radii(h: float) -> NDArray[np.float64]:
    """0.05h .. 1.5h in steps of 0.01h (146 radii)."""
    return np.round(np.arange(5, 151) * 0.01, 10) * h


def radius_sweep(
    h: float, count: int, sigma2: float, radii: Optional[Sequence[float]] = None
) -> List[Tuple[float, float]]:
    """Sum MSE of N evenly spaced points for each radius."""
    radii = default_sweep_radii(h) if radii is None else radii
    curve = []
    for radius in radii:
        if not radius > 0:
            raise ModelDomainError(f"sweep radii must be positive, got {radius}")
        gram = gram_for_points(h, circle_points(float(radius), count))
        curve.append((float(radius), calibration_sum_mse(gram, sigma2)))
    return curve


def random_ground_geometry(
    h: float, count: int, rng: np.random.Generator, radius_max: Optional[float] = None
) -> NDArray[np.float64]:
    """N uniformly scattered LED-centred ground points inside a disc (default radius 1.5h)."""
    radius_max = 1.5 * h if radius_max is None else radius_max
    radius = radius_max * np.sqrt(rng.uniform(0.0, 1.0, count))
    angle = rng.uniform(0.0, 2.0 * np.pi, count)
    return np.column_stack([radius * np.cos(angle), radius * np.sin(angle), np.zeros(count)])
