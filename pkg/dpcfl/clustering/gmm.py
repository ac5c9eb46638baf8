"""spherical Gaussian mixture fitted by EM over client model updates."""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import numpy.typing as npt
from scipy import special
from sklearn.cluster import kmeans_plusplus

from dpcfl.core.mathcore import StreamLike, as_generator
from dpcfl.errors import ConvergenceError, ParameterError

logger = logging.getLogger(__name__)

Array = npt.NDArray[np.float64]

# relative slack for the EM ascent check; differences below it are rounding
ASCENT_SLACK = 1e-9


@dataclass(frozen=True)
class GmmOptions:
    """EM settings."""

    tol: float = 1e-6
    max_iter: int = 500
    var_floor_ratio: float = 1e-6
    n_init: int = 3


@dataclass(frozen=True)
class GmmFit:
    """fitted mixture: M spherical components plus client responsibilities."""

    means: Array  # (M, p)
    per_coord_vars: Array  # (M,)
    weights: Array  # (M,)
    responsibilities: Array  # (n, M)
    em_iterations: int
    log_likelihood: float
    log_likelihood_trace: tuple[float, ...]
    var_floor: float

    @property
    def M(self) -> int:
        """number of components."""
        return int(self.means.shape[0])

    @property
    def p(self) -> int:
        """dimension of the fitted points."""
        return int(self.means.shape[1])

    def labels(self) -> npt.NDArray[np.int64]:
        """most probable component of every point."""
        return np.asarray(np.argmax(self.responsibilities, axis=1), dtype=np.int64)


def variance_floor(points: Array, ratio: float) -> float:
    """floor = ratio * pooled per-coordinate variance, or ratio if that is zero."""
    pooled = float(np.mean(np.var(points, axis=0)))
    return ratio * pooled if pooled > 0 else ratio


def _e_step(
    points: Array, means: Array, variances: Array, weights: Array
) -> tuple[float, Array]:
    p = points.shape[1]
    sq_dist = np.sum((points[:, None, :] - means[None, :, :]) ** 2, axis=2)
    with np.errstate(divide="ignore"):
        log_weights = np.log(weights)
    weighted = (
        log_weights[None, :]
        - 0.5 * p * np.log(2.0 * math.pi * variances)[None, :]
        - sq_dist / (2.0 * variances[None, :])
    )
    per_point = special.logsumexp(weighted, axis=1)
    responsibilities = np.exp(weighted - per_point[:, None])
    return math.fsum(per_point.tolist()), np.asarray(responsibilities, dtype=np.float64)


def _m_step(
    points: Array,
    responsibilities: Array,
    floor: float,
    previous: tuple[Array, Array],
) -> tuple[Array, Array, Array]:
    n, p = points.shape
    mass = responsibilities.sum(axis=0)
    weights = mass / n
    prev_means, prev_vars = previous
    means = prev_means.copy()
    variances = prev_vars.copy()

    alive = mass > 10.0 * np.finfo(np.float64).eps * n
    if np.any(alive):
        means[alive] = (responsibilities[:, alive].T @ points) / mass[alive, None]
        sq_dist = np.sum(
            (points[:, None, :] - means[None, alive, :]) ** 2, axis=2
        )
        spread = np.sum(responsibilities[:, alive] * sq_dist, axis=0)
        variances[alive] = np.maximum(spread / (p * mass[alive]), floor)
    return means, variances, weights


def _hard_responsibilities(points: Array, centers: Array) -> Array:
    sq_dist = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    labels = np.argmin(sq_dist, axis=1)
    resp = np.zeros_like(sq_dist)
    resp[np.arange(len(points)), labels] = 1.0
    return resp


def _run_em(
    points: Array, centers: Array, floor: float, options: GmmOptions
) -> GmmFit:
    pooled = max(float(np.mean(np.var(points, axis=0))), floor)
    means, variances, weights = _m_step(
        points,
        _hard_responsibilities(points, centers),
        floor,
        (centers.astype(np.float64), np.full(len(centers), pooled)),
    )

    trace: list[float] = []
    responsibilities = np.empty((len(points), len(centers)))
    iterations = 0
    for iterations in range(1, options.max_iter + 1):
        log_likelihood, responsibilities = _e_step(points, means, variances, weights)
        trace.append(log_likelihood)
        if len(trace) >= 2:
            previous = trace[-2]
            if log_likelihood < previous - ASCENT_SLACK * max(abs(previous), 1.0):
                raise ConvergenceError(
                    f"EM log-likelihood decreased from {previous} to {log_likelihood}"
                )
            if abs(log_likelihood - previous) <= options.tol * abs(previous):
                break
        if iterations == options.max_iter:
            break
        means, variances, weights = _m_step(
            points, responsibilities, floor, (means, variances)
        )

    return GmmFit(
        means=means,
        per_coord_vars=variances,
        weights=weights,
        responsibilities=responsibilities,
        em_iterations=iterations,
        log_likelihood=trace[-1],
        log_likelihood_trace=tuple(trace),
        var_floor=floor,
    )


def fit_gmm(
    updates: npt.ArrayLike,
    M: int,
    stream: StreamLike,
    options: Optional[GmmOptions] = None,
) -> GmmFit:
    """
    fits an M-component spherical mixture with k-means++ seeded EM.

    Runs options.n_init restarts and keeps the one with the highest
    log-likelihood. Stops when the relative log-likelihood change falls below
    options.tol or after options.max_iter iterations.

    Args:
        updates: points of shape (n, p)
        M: number of components, 1 <= M <= n
        stream: initialization stream
        options: EM settings

    Returns:
        best fit over the restarts

    Raises:
        ParameterError: if M is outside [1, n]
        ConvergenceError: if the log-likelihood decreases
    """
    opts = options or GmmOptions()
    points = np.asarray(updates, dtype=np.float64)
    if points.ndim != 2:
        raise ParameterError(f"updates must have shape (n, p), got {points.shape}")
    n = points.shape[0]
    if not 1 <= M <= n:
        raise ParameterError(f"need 1 <= M <= n, got M={M} with n={n}")

    rng = as_generator(stream)
    floor = variance_floor(points, opts.var_floor_ratio)
    best: Optional[GmmFit] = None
    for _ in range(max(1, opts.n_init)):
        centers, _ = kmeans_plusplus(
            points, n_clusters=M, random_state=int(rng.integers(2**31 - 1))
        )
        fit = _run_em(points, np.asarray(centers), floor, opts)
        if best is None or fit.log_likelihood > best.log_likelihood:
            best = fit

    assert best is not None
    logger.debug(
        "GMM M=%d converged in %d EM iterations (log-likelihood %.4f)",
        M,
        best.em_iterations,
        best.log_likelihood,
    )
    return best
