"""server aggregation and client-side cluster assignment rules."""

from collections.abc import Sequence

import numpy as np
import numpy.typing as npt

from dpcfl.core.mathcore import StreamLike, as_generator, as_param_vector
from dpcfl.core.models import ClientUpdate, ClusterModels
from dpcfl.errors import ParameterError

# tolerance for a responsibility row to count as normalized
ROW_SUM_TOLERANCE = 1e-6


def _stack_updates(
    models: ClusterModels, updates: Sequence[ClientUpdate]
) -> npt.NDArray[np.float64]:
    p = models.params.shape[1]
    if not updates:
        return np.zeros((0, p))
    stacked = np.stack([as_param_vector(u.update) for u in updates])
    if stacked.shape[1] != p:
        raise ParameterError(
            f"update dimension {stacked.shape[1]} does not match model dimension {p}"
        )
    return np.asarray(stacked, dtype=np.float64)


def aggregate_cluster(
    models: ClusterModels,
    updates: Sequence[ClientUpdate],
    assignments: Sequence[int],
) -> ClusterModels:
    """
    averages each cluster's updates into its model.

    theta_m += sum over clients i assigned to m of Delta_i / |{i: R(i) = m}|;
    clusters without clients keep their model.

    Args:
        models: cluster models at the start of the round
        updates: one update per client
        assignments: cluster of each update

    Returns:
        cluster models for the next round
    """
    if len(updates) != len(assignments):
        raise ParameterError("need exactly one assignment per update")
    if any(not 0 <= m < models.M for m in assignments):
        raise ParameterError(f"assignments must lie in [0, {models.M})")
    stacked = _stack_updates(models, updates)

    params = models.params.copy()
    labels = np.asarray(assignments, dtype=np.int64)
    for m in range(models.M):
        members = labels == m
        if np.any(members):
            params[m] = params[m] + stacked[members].mean(axis=0)
    return ClusterModels(params, models.round + 1)


def aggregate_soft(
    models: ClusterModels,
    updates: Sequence[ClientUpdate],
    responsibilities: npt.NDArray[np.float64],
) -> ClusterModels:
    """adds to every cluster the responsibility-weighted mean of all updates."""
    if responsibilities.shape != (len(updates), models.M):
        raise ParameterError("responsibilities must have shape (clients, M)")
    stacked = _stack_updates(models, updates)
    params = models.params.copy()
    mass = responsibilities.sum(axis=0)
    for m in range(models.M):
        if mass[m] > 0:
            params[m] = params[m] + responsibilities[:, m] @ stacked / mass[m]
    return ClusterModels(params, models.round + 1)


def sample_soft_assignment(pi_row: npt.ArrayLike, stream: StreamLike) -> int:
    """draws a cluster index with probabilities pi_row."""
    probabilities = np.asarray(pi_row, dtype=np.float64)
    if (
        probabilities.ndim != 1
        or np.any(probabilities < 0)
        or abs(probabilities.sum() - 1.0) > ROW_SUM_TOLERANCE
    ):
        raise ParameterError("assignment probabilities must be a normalized row")
    return int(as_generator(stream).choice(len(probabilities), p=probabilities / probabilities.sum()))


def private_select_cluster(
    accuracies: npt.ArrayLike, N_i: int, epsilon_select: float, stream: StreamLike
) -> int:
    """
    exponential mechanism over cluster models, scored by local accuracy.

    Realized as argmax of accuracy + Gumbel(0, 2 Delta / epsilon_select) with
    sensitivity Delta = 1 / (N_i - 1); ties go to the smallest index.

    Args:
        accuracies: accuracy of each cluster model on the client's data
        N_i: client dataset size, >= 2
        epsilon_select: per-selection budget
        stream: Gumbel stream

    Returns:
        selected cluster index
    """
    scores = np.asarray(accuracies, dtype=np.float64)
    if N_i < 2:
        raise ParameterError(f"selection needs N_i >= 2, got {N_i}")
    if epsilon_select <= 0:
        raise ParameterError(f"selection epsilon must be positive, got {epsilon_select}")
    if scores.ndim != 1 or len(scores) == 0:
        raise ParameterError("need at least one candidate score")

    sensitivity = 1.0 / (N_i - 1)
    noise = as_generator(stream).gumbel(
        loc=0.0, scale=2.0 * sensitivity / epsilon_select, size=len(scores)
    )
    return int(np.argmax(scores + noise))


def nonprivate_select_cluster(losses: npt.ArrayLike) -> int:
    """argmin of local train loss, smallest index on ties (diagnostics only)."""
    return int(np.argmin(np.asarray(losses, dtype=np.float64)))
