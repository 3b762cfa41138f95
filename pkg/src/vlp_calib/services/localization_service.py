"""
Localization service: ground-plane position from one RSS reading per LED.

This service handles:
- The residual calibration error variance and the total noise variance per LED
- The weighted LS objective and its damped Gauss-Newton solver
- The no-tilt multilateration baseline
- Fisher information and the x-y CRLB

The weight of LED l is 1 / E[n_l^2] evaluated at the current iterate, so the
solver is an iteratively reweighted LS. It minimises the exact objective:
residuals are whitened by sqrt(E[n_l^2]) and the Jacobian carries the
derivative of the weights.
"""

import logging
from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .calibration_service import LedCalibration
from .errors import ModelDomainError, SingularGeometryError, UnboundedCrlbError, UnlocatableError, VlpError

logger = logging.getLogger(__name__)

MethodTag = Literal["weighted_ls", "multilateration", "gp"]
WeightMode = Literal["iterate", "frozen", "none"]
Bounds = Tuple[Tuple[float, float], Tuple[float, float]]
FIM_CONDITION_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class LocalizationProblem:
    """Calibrated LEDs and the RSS vector measured at the unknown ground position.

    ``noise_variances`` overrides the calibrated sigma2_hat (e.g. datasheet values).
    """
    calibrations: Sequence[LedCalibration]
    rss: NDArray[np.float64]
    noise_variances: Optional[NDArray[np.float64]] = None
    bounds: Optional[Bounds] = None

    def __post_init__(self):
        rss = np.asarray(self.rss, dtype=float).reshape(-1)
        if len(rss) != len(self.calibrations):
            raise ModelDomainError(f"{len(self.calibrations)} calibrations but {len(rss)} RSS readings")
        if not np.all(np.isfinite(rss)):
            raise ModelDomainError("RSS readings must be finite")
        object.__setattr__(self, "rss", rss)
        object.__setattr__(self, "calibrations", tuple(self.calibrations))
        if self.noise_variances is not None:
            variances = np.asarray(self.noise_variances, dtype=float).reshape(-1)
            if len(variances) != len(rss):
                raise ModelDomainError("one noise variance per LED is required")
            object.__setattr__(self, "noise_variances", variances)

    @property
    def led_count(self) -> int:
        return len(self.calibrations)

    @property
    def sigma2(self) -> NDArray[np.float64]:
        if self.noise_variances is not None:
            return self.noise_variances
        return np.array([cal.sigma2_hat for cal in self.calibrations])

    @property
    def led_projections(self) -> NDArray[np.float64]:
        return np.array([cal.led_position[:2] for cal in self.calibrations])

    def search_bounds(self) -> Bounds:
        """Explicit bounds, or the LED footprint padded by the tallest LED height."""
        if self.bounds is not None:
            return self.bounds
        pad = max(cal.height for cal in self.calibrations)
        xy = self.led_projections
        return (
            (float(xy[:, 0].min() - pad), float(xy[:, 0].max() + pad)),
            (float(xy[:, 1].min() - pad), float(xy[:, 1].max() + pad)),
        )


@dataclass(frozen=True)
class SolverOptions:
    """``grad_tol`` is relative to max(1, |J| |rho|) of the whitened system."""
    grad_tol: float = 1e-10
    max_iters: int = 200
    freeze_weights: bool = False
    initial_damping: float = 1e-3
    proximity_guard: float = 0.01
    init_grid_step: float = 0.25
    step_tol: float = 1e-12


@dataclass(frozen=True)
class PositionEstimate:
    """``objective_value`` is the objective the method minimised; ``weights`` says which one.

    ``iterate`` is the weighted LS objective with weights at the estimate, ``frozen``
    keeps the start-point weights, ``none`` is an unweighted or non-LS criterion.
    """
    xy: Tuple[float, float]
    objective_value: float
    iterations: int
    converged: bool
    method_tag: MethodTag
    weights: WeightMode = "none"


@dataclass(frozen=True, eq=False)
class CrlbReport:
    fim: NDArray[np.float64]
    covariance_bound: NDArray[np.float64]
    crlb_xy: float


def _ground_points(candidates: ArrayLike) -> NDArray[np.float64]:
    pts = np.atleast_2d(np.asarray(candidates, dtype=float))
    if pts.shape[1] == 2:
        pts = np.column_stack([pts, np.zeros(len(pts))])
    return pts


def _led_terms(cal: LedCalibration, points: NDArray[np.float64]):
    """Per-candidate d, |d|, n_hat.d and d^T Omega^-1 d for one LED."""
    d = points - cal.led_position
    dist = np.linalg.norm(d, axis=1)
    if np.any(dist == 0.0):
        raise ModelDomainError("candidate coincides with an LED position")
    quad = np.einsum("ki,ij,kj->k", d, cal.ggt_inverse, d)
    return d, dist, d @ cal.normal_hat, quad


def predicted_rss(cal: LedCalibration, candidates: ArrayLike) -> NDArray[np.float64]:
    """mu_l = c_hat h / d^4 * n_hat.d for each candidate."""
    points = _ground_points(candidates)
    _, dist, nd, _ = _led_terms(cal, points)
    return cal.gain_hat * cal.height / dist**4 * nd


def residual_error_variance(cal: LedCalibration, candidate: ArrayLike, sigma2: Optional[float] = None) -> float:
    """Variance of the model error left by calibration noise at ``candidate``."""
    sigma2 = cal.sigma2_hat if sigma2 is None else sigma2
    _, dist, _, quad = _led_terms(cal, _ground_points(candidate))
    return float(sigma2 * cal.height**2 / dist[0] ** 8 * quad[0])


def total_noise_variance(cal: LedCalibration, candidate: ArrayLike, sigma2: Optional[float] = None) -> float:
    sigma2 = cal.sigma2_hat if sigma2 is None else sigma2
    return residual_error_variance(cal, candidate, sigma2) + sigma2


def _variance_terms(cal: LedCalibration, sigma2: float, points: NDArray[np.float64]):
    """E[n^2] and its gradient (K x 3) for each candidate."""
    d, dist, _, quad = _led_terms(cal, points)
    h2 = cal.height**2
    variance = sigma2 * (h2 / dist**8 * quad + 1.0)
    omega_d = d @ cal.ggt_inverse.T
    grad = sigma2 * (
        (-8.0 * h2 / dist**10 * quad)[:, None] * d + (2.0 * h2 / dist**8)[:, None] * omega_d
    )
    return variance, grad


def _mean_terms(cal: LedCalibration, points: NDArray[np.float64]):
    """mu and its gradient (K x 3) for each candidate."""
    d, dist, nd, _ = _led_terms(cal, points)
    scale = cal.gain_hat * cal.height
    mu = scale / dist**4 * nd
    grad = (-4.0 * scale / dist**6 * nd)[:, None] * d + (scale / dist**4)[:, None] * cal.normal_hat
    return mu, grad


def weighted_ls_objective_many(problem: LocalizationProblem, candidates_xy: ArrayLike) -> NDArray[np.float64]:
    points = _ground_points(candidates_xy)
    total = np.zeros(len(points))
    for cal, s, sigma2 in zip(problem.calibrations, problem.rss, problem.sigma2):
        mu, _ = _mean_terms(cal, points)
        variance, _ = _variance_terms(cal, sigma2, points)
        total += (s - mu) ** 2 / variance
    return total


def weighted_ls_objective(problem: LocalizationProblem, candidate_xy: ArrayLike) -> float:
    return float(weighted_ls_objective_many(problem, candidate_xy)[0])


def _require_positive_variances(problem: LocalizationProblem) -> None:
    if np.any(problem.sigma2 <= 0):
        raise ModelDomainError("weighted LS needs positive noise variances for every LED")


def _whitened_system(
    problem: LocalizationProblem, xy: NDArray[np.float64], frozen: Optional[NDArray[np.float64]]
) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Whitened residuals rho_l = (s_l - mu_l) / sqrt(E_l) and their x-y Jacobian."""
    point = _ground_points(xy)
    rho = np.empty(problem.led_count)
    jac = np.empty((problem.led_count, 2))
    for i, (cal, s, sigma2) in enumerate(zip(problem.calibrations, problem.rss, problem.sigma2)):
        mu, dmu = _mean_terms(cal, point)
        residual = s - mu[0]
        if frozen is not None:
            root = np.sqrt(frozen[i])
            rho[i] = residual / root
            jac[i] = -dmu[0, :2] / root
            continue
        variance, dvar = _variance_terms(cal, sigma2, point)
        root = np.sqrt(variance[0])
        rho[i] = residual / root
        jac[i] = -dmu[0, :2] / root - 0.5 * residual * variance[0] ** -1.5 * dvar[0, :2]
    return rho, jac


def _gradient_small(
    jac: NDArray[np.float64],
    rho: NDArray[np.float64],
    grad_tol: float,
    stalled_at: Optional[NDArray[np.float64]] = None,
) -> bool:
    """Gradient test relative to the scale of J^T rho.

    Once no step lowers the cost, the gradient cannot drop below what rounding
    of xy and rho leaves, roughly eps |J| (|rho| + |J| |xy|).
    """
    gradient = float(np.linalg.norm(2.0 * jac.T @ rho))
    j_norm = float(np.linalg.norm(jac))
    tolerance = grad_tol * max(1.0, j_norm * float(np.linalg.norm(rho)))
    if stalled_at is not None:
        floor = 64.0 * np.finfo(float).eps * j_norm * (np.linalg.norm(rho) + j_norm * np.linalg.norm(stalled_at))
        tolerance = max(tolerance, float(floor))
    return gradient <= tolerance


def _too_close(problem: LocalizationProblem, xy: NDArray[np.float64], guard: float) -> bool:
    return bool(np.any(np.linalg.norm(problem.led_projections - xy, axis=1) < guard))


def grid_search(
    problem: LocalizationProblem, step: float = 0.001, bounds: Optional[Bounds] = None
) -> Tuple[Tuple[float, float], float]:
    """Exhaustive argmin of the weighted LS objective on a regular grid."""
    (x_lo, x_hi), (y_lo, y_hi) = bounds or problem.search_bounds()
    xs = np.arange(x_lo, x_hi + 0.5 * step, step)
    ys = np.arange(y_lo, y_hi + 0.5 * step, step)
    _require_positive_variances(problem)
    best_xy, best_value = None, np.inf
    for y in ys:
        row = np.column_stack([xs, np.full_like(xs, y)])
        values = weighted_ls_objective_many(problem, row)
        idx = int(np.argmin(values))
        if values[idx] < best_value:
            best_value = float(values[idx])
            best_xy = (float(row[idx, 0]), float(row[idx, 1]))
    if best_xy is None:
        raise UnlocatableError("grid search found no finite objective value")
    return best_xy, best_value


def _initial_guess(problem: LocalizationProblem, options: SolverOptions) -> NDArray[np.float64]:
    try:
        estimate = multilaterate(problem)
        xy = np.array(estimate.xy)
        if np.all(np.isfinite(xy)) and not _too_close(problem, xy, options.proximity_guard):
            return xy
    except VlpError as e:
        logger.debug("Multilateration start failed (%s), falling back to grid scan", e)
    xy, _ = grid_search(problem, step=options.init_grid_step)
    return np.array(xy)


def solve_weighted_ls(
    problem: LocalizationProblem,
    options: Optional[SolverOptions] = None,
    initial_xy: Optional[ArrayLike] = None,
) -> PositionEstimate:
    """Stage 2: damped Gauss-Newton on the weighted LS objective, z pinned to 0."""
    options = options or SolverOptions()
    if problem.led_count < 3:
        raise ModelDomainError(f"2D localization needs at least 3 LEDs, got {problem.led_count}")
    if np.all(problem.rss <= 0):
        raise UnlocatableError("all RSS readings are nonpositive")
    _require_positive_variances(problem)

    xy = _initial_guess(problem, options) if initial_xy is None else np.asarray(initial_xy, dtype=float)
    frozen = None
    if options.freeze_weights:
        point = _ground_points(xy)
        frozen = np.array([
            _variance_terms(cal, sigma2, point)[0][0]
            for cal, sigma2 in zip(problem.calibrations, problem.sigma2)
        ])

    damping = options.initial_damping
    rho, jac = _whitened_system(problem, xy, frozen)
    cost = float(rho @ rho)
    converged = False
    iterations = 0
    while True:
        if _gradient_small(jac, rho, options.grad_tol):
            converged = True
            break
        if iterations >= options.max_iters:
            break
        normal = jac.T @ jac
        accepted = False
        step = np.zeros(2)
        while damping < 1e16:
            try:
                step = np.linalg.solve(normal + damping * np.diag(np.diag(normal)), -jac.T @ rho)
            except np.linalg.LinAlgError:
                damping *= 10.0
                continue
            candidate = xy + step
            # d^-4 and d^-8 blow up next to an LED projection
            if _too_close(problem, candidate, options.proximity_guard):
                damping *= 10.0
                continue
            rho_new, jac_new = _whitened_system(problem, candidate, frozen)
            cost_new = float(rho_new @ rho_new)
            if cost_new < cost:
                xy, rho, jac, cost = candidate, rho_new, jac_new, cost_new
                damping = max(damping / 10.0, 1e-15)
                accepted = True
                break
            damping *= 10.0
        if accepted:
            iterations += 1
        # no strict decrease left, or a step below step_tol: the floating-point floor
        if not accepted or np.linalg.norm(step) <= options.step_tol:
            converged = _gradient_small(jac, rho, options.grad_tol, stalled_at=xy)
            break

    if not converged:
        logger.debug("Weighted LS stopped after %d iterations without meeting grad_tol", iterations)
    return PositionEstimate(
        xy=(float(xy[0]), float(xy[1])),
        objective_value=weighted_ls_objective(problem, xy) if frozen is None else cost,
        iterations=iterations,
        converged=bool(converged),
        method_tag="weighted_ls",
        weights="iterate" if frozen is None else "frozen",
    )


def multilaterate(problem: LocalizationProblem, no_tilt_gains: Optional[ArrayLike] = None) -> PositionEstimate:
    """No-tilt baseline: RSS -> range via s = c h^2 / d^4, then linearised circle equations."""
    if no_tilt_gains is None:
        no_tilt_gains = [
            cal.no_tilt_gain if cal.no_tilt_gain is not None else cal.gain_hat for cal in problem.calibrations
        ]
    gains = np.asarray(no_tilt_gains, dtype=float)
    if np.any(problem.rss <= 0):
        raise UnlocatableError("multilateration needs strictly positive RSS from every LED")
    if problem.led_count < 3:
        raise SingularGeometryError(f"multilateration needs at least 3 LEDs, got {problem.led_count}")

    heights = np.array([cal.height for cal in problem.calibrations])
    ranges = (gains * heights**2 / problem.rss) ** 0.25
    horizontal2 = np.maximum(ranges**2 - heights**2, 0.0)
    xy = problem.led_projections
    A = 2.0 * (xy[1:] - xy[0])
    b = horizontal2[0] - horizontal2[1:] + np.sum(xy[1:] ** 2, axis=1) - np.sum(xy[0] ** 2)
    if np.linalg.matrix_rank(A) < 2:
        raise SingularGeometryError("LED projections are collinear; multilateration is rank deficient")
    solution, *_ = np.linalg.lstsq(A, b, rcond=None)
    residual = A @ solution - b
    return PositionEstimate(
        xy=(float(solution[0]), float(solution[1])),
        objective_value=float(residual @ residual),
        iterations=0,
        converged=True,
        method_tag="multilateration",
    )


def fim(problem: LocalizationProblem, position: ArrayLike, include_variance_term: bool = True) -> NDArray[np.float64]:
    """Fisher information of the 3D receiver position, summed over independent LEDs."""
    point = _ground_points(np.asarray(position, dtype=float).reshape(-1)[:2])
    _require_positive_variances(problem)
    info = np.zeros((3, 3))
    for cal, sigma2 in zip(problem.calibrations, problem.sigma2):
        _, dmu = _mean_terms(cal, point)
        variance, dvar = _variance_terms(cal, sigma2, point)
        info += np.outer(dmu[0], dmu[0]) / variance[0]
        if include_variance_term:
            info += 0.5 * np.outer(dvar[0], dvar[0]) / variance[0] ** 2
    return 0.5 * (info + info.T)


def crlb_xy(problem: LocalizationProblem, position: ArrayLike, include_variance_term: bool = True) -> CrlbReport:
    """Bound for (x, y) with z known to be 0.

    ``fim`` is the full 3x3 information; the bound inverts its x-y block, and
    the z row and column of ``covariance_bound`` are zero.
    """
    info = fim(problem, position, include_variance_term)
    planar = info[:2, :2]
    cond = np.linalg.cond(planar)
    if not np.isfinite(cond) or cond > FIM_CONDITION_LIMIT:
        raise UnboundedCrlbError(f"x-y Fisher information is singular (condition number {cond:.3g})")
    covariance = np.zeros((3, 3))
    covariance[:2, :2] = np.linalg.inv(planar)
    return CrlbReport(
        fim=info,
        covariance_bound=covariance,
        crlb_xy=float(np.sqrt(covariance[0, 0] + covariance[1, 1])),
    )


def localize_many(
    calibrations: Sequence[LedCalibration],
    rss_rows: ArrayLike,
    options: Optional[SolverOptions] = None,
    noise_variances: Optional[ArrayLike] = None,
) -> List[PositionEstimate]:
    """Weighted LS for each RSS row against one set of calibrations."""
    return [
        solve_weighted_ls(LocalizationProblem(calibrations, row, noise_variances), options)
        for row in np.atleast_2d(np.asarray(rss_rows, dtype=float))
    ]
