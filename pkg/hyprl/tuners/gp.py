"""Gaussian-process surrogate for model-based search over a configuration grid.

Observed losses are centered on their mean before fitting (``prior_mean``) and
the mean is added back on prediction, so far from the data the posterior
reverts to the observed average. Kernel hyperparameters are fitted by
maximizing the log marginal likelihood in log space with L-BFGS-B.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Tuple, Union

import numpy as np
from scipy import linalg, optimize
from scipy.spatial.distance import cdist
from scipy.stats import norm

from hyprl.errors import GpError, ShapeError
from hyprl.meta import GP_FIT_ITERATIONS, GP_NOISE_FLOOR

# relative to the mean kernel diagonal
JITTER_START = 1e-12
JITTER_MAX = 1e-6
# posterior variances below this fraction of the signal variance are round-off
VARIANCE_ROUNDOFF = 1e-10

LENGTHSCALE_BOUNDS = (1e-2, 1e2)
SIGNAL_BOUNDS = (1e-6, 1e2)
NOISE_CEILING = 1.0

SQRT5 = np.sqrt(5.0)


class KernelKind(Enum):
    SE_ARD = "se_ard"
    MATERN52 = "matern52"

    @classmethod
    def from_str(cls, string: str) -> "KernelKind":
        normalized = string.strip().lower().replace("-", "_").replace("/", "")
        if normalized in {"se", "rbf", "squared_exponential"}:
            return KernelKind.SE_ARD
        if normalized in {"matern", "matern_52", "matern5_2"}:
            return KernelKind.MATERN52
        try:
            return KernelKind(normalized)
        except ValueError:
            raise ValueError(f"unknown kernel {string!r}") from None


def kernel_matrix(
    kind: KernelKind,
    A: np.ndarray,
    B: np.ndarray,
    lengthscales: np.ndarray,
    signal_variance: float,
) -> np.ndarray:
    A = np.atleast_2d(A) / lengthscales
    B = np.atleast_2d(B) / lengthscales
    squared = cdist(A, B, metric="sqeuclidean")
    if kind is KernelKind.SE_ARD:
        return signal_variance * np.exp(-0.5 * squared)
    r = np.sqrt(squared)
    return signal_variance * (1.0 + SQRT5 * r + (5.0 / 3.0) * squared) * np.exp(-SQRT5 * r)


@dataclass(eq=False)
class GpSurrogate:
    X: np.ndarray
    y: np.ndarray
    kind: KernelKind
    lengthscales: np.ndarray
    signal_variance: float
    noise_variance: float
    prior_mean: float = 0.0

    def __post_init__(self) -> None:
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        self.lengthscales = np.asarray(self.lengthscales, dtype=np.float64).ravel()
        if len(self.y) == 0:
            raise ShapeError("a surrogate needs at least one observation")
        if self.X.shape[0] != len(self.y):
            raise ShapeError(f"{self.X.shape[0]} inputs for {len(self.y)} observations")
        if len(self.lengthscales) != self.X.shape[1]:
            raise ShapeError(
                f"{len(self.lengthscales)} length-scales for {self.X.shape[1]} input dimensions"
            )
        if np.any(self.lengthscales <= 0) or self.signal_variance <= 0:
            raise ValueError("length-scales and signal variance must be positive")
        if self.noise_variance < 0:
            raise ValueError("noise variance must not be negative")

    def gram(self) -> np.ndarray:
        K = kernel_matrix(self.kind, self.X, self.X, self.lengthscales, self.signal_variance)
        return K + self.noise_variance * np.eye(len(self.y))


def cholesky_with_jitter(K: np.ndarray) -> Tuple[np.ndarray, bool]:
    """Lower Cholesky factor in ``cho_factor`` form; adds growing diagonal
    jitter up to ``JITTER_MAX`` times the mean diagonal before giving up."""
    try:
        return linalg.cho_factor(K, lower=True)
    except linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(K)))
    if not np.isfinite(scale) or scale <= 0:
        raise GpError("kernel matrix has a non-positive diagonal")
    jitter = JITTER_START
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            return linalg.cho_factor(K + jitter * scale * np.eye(len(K)), lower=True)
        except linalg.LinAlgError:
            jitter *= 10.0
    raise GpError(f"kernel matrix is not positive definite after jitter {JITTER_MAX:g}")


def gp_posterior_batch(sur: GpSurrogate, X_star: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    X_star = np.atleast_2d(np.asarray(X_star, dtype=np.float64))
    if X_star.shape[1] != sur.X.shape[1]:
        raise ShapeError(f"query has {X_star.shape[1]} dimensions, surrogate {sur.X.shape[1]}")
    factor = cholesky_with_jitter(sur.gram())
    alpha = linalg.cho_solve(factor, sur.y - sur.prior_mean)
    k_star = kernel_matrix(sur.kind, sur.X, X_star, sur.lengthscales, sur.signal_variance)
    mean = sur.prior_mean + k_star.T @ alpha
    v = linalg.cho_solve(factor, k_star)
    variance = sur.signal_variance - np.sum(k_star * v, axis=0)
    return mean, np.where(variance > VARIANCE_ROUNDOFF * sur.signal_variance, variance, 0.0)


def gp_posterior(sur: GpSurrogate, x_star: np.ndarray) -> Tuple[float, float]:
    mean, variance = gp_posterior_batch(sur, np.asarray(x_star, dtype=np.float64).reshape(1, -1))
    return float(mean[0]), float(variance[0])


def expected_improvement(
    mean: Union[float, np.ndarray], variance: Union[float, np.ndarray], best_loss: float
) -> Union[float, np.ndarray]:
    """Expected improvement below ``best_loss`` (minimization)."""
    mean = np.asarray(mean, dtype=np.float64)
    sigma = np.sqrt(np.maximum(np.asarray(variance, dtype=np.float64), 0.0))
    improvement = best_loss - mean
    safe_sigma = np.where(sigma > 0, sigma, 1.0)
    z = improvement / safe_sigma
    ei = np.where(
        sigma > 0,
        improvement * norm.cdf(z) + sigma * norm.pdf(z),
        np.maximum(improvement, 0.0),
    )
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def negative_log_likelihood(
    log_params: np.ndarray, X: np.ndarray, y: np.ndarray, kind: KernelKind
) -> float:
    lengthscales = np.exp(log_params[:-2])
    signal_variance, noise_variance = np.exp(log_params[-2:])
    K = kernel_matrix(kind, X, X, lengthscales, signal_variance) + noise_variance * np.eye(len(y))
    try:
        factor = linalg.cho_factor(K, lower=True)
    except linalg.LinAlgError:
        return 1e25
    alpha = linalg.cho_solve(factor, y)
    log_det = 2.0 * np.sum(np.log(np.diag(factor[0])))
    return float(0.5 * y @ alpha + 0.5 * log_det + 0.5 * len(y) * np.log(2.0 * np.pi))


def fit_gp(
    X: np.ndarray,
    y: np.ndarray,
    kind: KernelKind,
    iterations: int = GP_FIT_ITERATIONS,
    noise_floor: float = GP_NOISE_FLOOR,
) -> GpSurrogate:
    logger = logging.getLogger(__name__)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    prior_mean = float(y.mean())
    centered = y - prior_mean
    signal = max(float(centered.var()), SIGNAL_BOUNDS[0])

    start = np.log(
        np.concatenate(
            [np.ones(X.shape[1]), [signal, max(noise_floor, 1e-2 * signal)]]
        )
    )
    bounds = [tuple(np.log(LENGTHSCALE_BOUNDS))] * X.shape[1] + [
        tuple(np.log(SIGNAL_BOUNDS)),
        (np.log(noise_floor), np.log(NOISE_CEILING)),
    ]
    start = np.clip(start, [low for low, _ in bounds], [high for _, high in bounds])
    result = optimize.minimize(
        negative_log_likelihood,
        start,
        args=(X, centered, kind),
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": iterations},
    )
    log_params = result.x if np.all(np.isfinite(result.x)) else start
    if not result.success:
        logger.debug(f"GP hyperparameter fit stopped early: {result.message}")
    return GpSurrogate(
        X=X,
        y=y,
        kind=kind,
        lengthscales=np.exp(log_params[:-2]),
        signal_variance=float(np.exp(log_params[-2])),
        noise_variance=float(np.exp(log_params[-1])),
        prior_mean=prior_mean,
    )
