"""Gaussian-process regression baseline mapping an RSS vector to a ground position.

Squared-exponential kernel with one length scale shared over the standardised
RSS dimensions, constant prior mean (training-target mean), hyperparameters
picked from a log-spaced grid by log marginal likelihood summed over the x and
y outputs.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg

from .errors import GpFitError, ModelDomainError

logger = logging.getLogger(__name__)

JITTER_ESCALATIONS = 6


@dataclass(frozen=True)
class HyperGrid:
    length_scales: Tuple[float, ...] = tuple(np.logspace(-2, 1, 13))
    signal_variances: Tuple[float, ...] = tuple(np.logspace(-2, 1, 7))
    noise_jitters: Tuple[float, ...] = tuple(np.logspace(-8, -4, 5))

    def combinations(self) -> Iterable[Tuple[float, float, float]]:
        for length_scale in self.length_scales:
            for signal_variance in self.signal_variances:
                for noise_jitter in self.noise_jitters:
                    yield float(length_scale), float(signal_variance), float(noise_jitter)


@dataclass(frozen=True, eq=False)
class GpModel:
    training_inputs: NDArray[np.float64]
    training_targets: NDArray[np.float64]
    input_scale: NDArray[np.float64]
    target_mean: NDArray[np.float64]
    length_scale: float
    signal_variance: float
    noise_jitter: float
    alpha: NDArray[np.float64]
    log_marginal_likelihood: float


def _standardise(inputs: NDArray[np.float64]) -> NDArray[np.float64]:
    scale = inputs.std(axis=0)
    scale[scale == 0] = 1.0
    return scale


def squared_exponential(a: NDArray[np.float64], b: NDArray[np.float64], length_scale: float, signal_variance: float):
    sq = np.sum(a**2, axis=1)[:, None] + np.sum(b**2, axis=1)[None, :] - 2.0 * a @ b.T
    return signal_variance * np.exp(-0.5 * np.maximum(sq, 0.0) / length_scale**2)


def _factor(kernel: NDArray[np.float64], jitter: float):
    """Cholesky of K + jitter*I, escalating the jitter tenfold on failure."""
    eye = np.eye(len(kernel))
    for _ in range(JITTER_ESCALATIONS):
        try:
            return linalg.cho_factor(kernel + jitter * eye, lower=True), jitter
        except linalg.LinAlgError:
            jitter *= 10.0
    raise GpFitError(f"kernel matrix is not positive definite even with jitter {jitter:.1e}")


def log_marginal_likelihood(
    scaled_inputs: NDArray[np.float64],
    centred_targets: NDArray[np.float64],
    length_scale: float,
    signal_variance: float,
    noise_jitter: float,
) -> float:
    """Sum over output columns of log p(y | X, theta)."""
    kernel = squared_exponential(scaled_inputs, scaled_inputs, length_scale, signal_variance)
    factor, _ = _factor(kernel, noise_jitter)
    alpha = linalg.cho_solve(factor, centred_targets)
    log_det = 2.0 * np.sum(np.log(np.diag(factor[0])))
    m, outputs = centred_targets.shape
    return float(
        -0.5 * np.sum(centred_targets * alpha) - 0.5 * outputs * log_det - 0.5 * outputs * m * np.log(2 * np.pi)
    )


def gp_fit(inputs: ArrayLike, targets: ArrayLike, hyper_grid: Optional[HyperGrid] = None) -> GpModel:
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float).reshape(len(x), -1)
    if len(x) < 1:
        raise ModelDomainError("GP needs at least one training point")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ModelDomainError("GP training data must be finite")
    hyper_grid = hyper_grid or HyperGrid()

    # exact duplicate rows carry no information; sorting fixes the row order
    rows = np.unique(np.hstack([x, y]), axis=0)
    if len(rows) < len(x):
        logger.debug("GP fit: dropped %d duplicate training rows", len(x) - len(rows))
    x, y = rows[:, :x.shape[1]], rows[:, x.shape[1]:]

    scale = _standardise(x)
    scaled = x / scale
    target_mean = y.mean(axis=0)
    centred = y - target_mean

    best = None
    for length_scale, signal_variance, noise_jitter in hyper_grid.combinations():
        try:
            lml = log_marginal_likelihood(scaled, centred, length_scale, signal_variance, noise_jitter)
        except GpFitError:
            continue
        if best is None or lml > best[0]:
            best = (lml, length_scale, signal_variance, noise_jitter)
    if best is None:
        raise GpFitError("no hyperparameter combination gave a positive definite kernel")

    lml, length_scale, signal_variance, noise_jitter = best
    kernel = squared_exponential(scaled, scaled, length_scale, signal_variance)
    factor, noise_jitter = _factor(kernel, noise_jitter)
    logger.debug(
        "GP fit on %d points: length_scale=%.3g signal_variance=%.3g jitter=%.1e lml=%.4g",
        len(x), length_scale, signal_variance, noise_jitter, lml,
    )
    return GpModel(
        training_inputs=x,
        training_targets=y,
        input_scale=scale,
        target_mean=target_mean,
        length_scale=length_scale,
        signal_variance=signal_variance,
        noise_jitter=noise_jitter,
        alpha=linalg.cho_solve(factor, centred),
        log_marginal_likelihood=lml,
    )


def predict_many(model: GpModel, rss_rows: ArrayLike) -> NDArray[np.float64]:
    """Posterior mean for each RSS row (K x L) -> K x 2."""
    query = np.atleast_2d(np.asarray(rss_rows, dtype=float)) / model.input_scale
    cross = squared_exponential(query, model.training_inputs / model.input_scale, model.length_scale, model.signal_variance)
    return model.target_mean + cross @ model.alpha


def gp_predict(model: GpModel, rss: ArrayLike) -> Tuple[float, float]:
    x, y = predict_many(model, np.asarray(rss, dtype=float).reshape(1, -1))[0][:2]
    return float(x), float(y)
