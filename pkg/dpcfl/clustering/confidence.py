"""separation, overlap and confidence scores of a fitted mixture."""

import logging
import math
from collections.abc import Iterable
from dataclasses import dataclass
from typing import Optional

import numpy as np
import numpy.typing as npt
from sklearn.metrics import adjusted_rand_score

from dpcfl.clustering.gmm import GmmFit, GmmOptions, fit_gmm
from dpcfl.core.mathcore import StreamLike, as_generator, q_function
from dpcfl.errors import ParameterError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfidenceReport:
    """pairwise separation scores with their minimum (MSS) and the implied overlap (MPO)."""

    pairwise_ss: npt.NDArray[np.float64]  # (M, M), zero diagonal
    mss: float
    mpo: float


def separation_score(fit: GmmFit, m: int, m_other: int) -> float:
    """
    estimated separation of two components.

    ||mu_m - mu_m'|| / (2 sqrt(v)), with v the mean of the two per-coordinate
    variances.

    Args:
        fit: fitted mixture
        m: first component
        m_other: second component, different from m

    Returns:
        separation score
    """
    if m == m_other or not (0 <= m < fit.M and 0 <= m_other < fit.M):
        raise ParameterError(f"invalid component pair ({m}, {m_other}) for M={fit.M}")
    distance = float(np.linalg.norm(fit.means[m] - fit.means[m_other]))
    pooled = 0.5 * float(fit.per_coord_vars[m] + fit.per_coord_vars[m_other])
    return distance / (2.0 * math.sqrt(pooled))


def confidence(fit: GmmFit) -> ConfidenceReport:
    """MSS over all component pairs and MPO = 2 Q(MSS); a single component has MSS = inf."""
    M = fit.M
    pairwise = np.zeros((M, M))
    for m in range(M):
        for m_other in range(m + 1, M):
            pairwise[m, m_other] = pairwise[m_other, m] = separation_score(
                fit, m, m_other
            )

    if M == 1:
        return ConfidenceReport(pairwise, math.inf, 0.0)
    mss = float(min(pairwise[np.triu_indices(M, k=1)]))
    return ConfidenceReport(pairwise, mss, 2.0 * q_function(mss))


def theoretical_overlap(delta: float, sigma: float, p: int) -> float:
    """overlap 2 Q(sqrt(p) delta / (2 sigma)) of two components with covariance (sigma^2/p) I."""
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    if p < 1:
        raise ParameterError(f"dimension must be >= 1, got {p}")
    return 2.0 * q_function(math.sqrt(p) * delta / (2.0 * sigma))


def score_cluster_counts(
    updates: npt.ArrayLike,
    candidates: Iterable[int],
    stream: StreamLike,
    options: Optional[GmmOptions] = None,
) -> dict[int, tuple[GmmFit, ConfidenceReport]]:
    """fits one mixture per candidate count, each from its own seeded initialization."""
    rng = as_generator(stream)
    scored: dict[int, tuple[GmmFit, ConfidenceReport]] = {}
    for M in sorted(set(candidates)):
        child = np.random.default_rng(int(rng.integers(2**63 - 1)))
        fit = fit_gmm(updates, M, child, options)
        scored[M] = (fit, confidence(fit))
        logger.debug("M=%d: MSS=%.4f", M, scored[M][1].mss)
    return scored


def best_cluster_count(scored: dict[int, tuple[GmmFit, ConfidenceReport]]) -> int:
    """argmax of MSS, smallest M on ties."""
    if not scored:
        raise ParameterError("no candidate cluster counts")
    return max(sorted(scored), key=lambda M: (scored[M][1].mss, -M))


def select_num_clusters(
    updates: npt.ArrayLike,
    candidates: Iterable[int],
    stream: StreamLike,
    options: Optional[GmmOptions] = None,
) -> int:
    """
    picks the number of clusters whose fitted mixture has the largest MSS.

    Args:
        updates: first-round model updates, shape (n, p)
        candidates: non-empty set of counts, none above n
        stream: initialization stream
        options: EM settings

    Returns:
        selected number of clusters
    """
    candidate_set = set(candidates)
    n = np.asarray(updates).shape[0]
    if not candidate_set:
        raise ParameterError("candidate set is empty")
    if max(candidate_set) > n or min(candidate_set) < 1:
        raise ParameterError(f"candidates must lie in [1, {n}]")
    return best_cluster_count(score_cluster_counts(updates, candidate_set, stream, options))


def switch_round(mpo: float, E: int) -> int:
    """E_c = max(1, floor((1 - MPO) E / 2))."""
    if not 0.0 <= mpo <= 1.0:
        raise ParameterError(f"MPO must be in [0, 1], got {mpo}")
    if E < 2:
        raise ParameterError(f"need at least 2 rounds, got {E}")
    return max(1, math.floor((1.0 - mpo) * E / 2))


def adjusted_rand(labels: npt.ArrayLike, truth: npt.ArrayLike) -> float:
    """adjusted Rand index between an assignment and the true clusters."""
    return float(adjusted_rand_score(np.asarray(truth), np.asarray(labels)))
