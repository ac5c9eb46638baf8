"""R-DPCFL and the baseline federated algorithms, registered by name."""

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass
from typing import Optional

import numpy as np
import numpy.typing as npt

from dpcfl.clustering.confidence import (
    ConfidenceReport,
    adjusted_rand,
    best_cluster_count,
    confidence,
    score_cluster_counts,
    switch_round,
)
from dpcfl.clustering.gmm import GmmFit, fit_gmm
from dpcfl.core.config import ExperimentConfig
from dpcfl.core.mathcore import SERVER_ID, ParamVector, StreamTag, derive_stream
from dpcfl.core.models import (
    ClusterModels,
    FederatedDataset,
    FirstRoundSummary,
    RunResult,
)
from dpcfl.errors import ParameterError
from dpcfl.federation.engine import Federation
from dpcfl.federation.server import (
    aggregate_cluster,
    aggregate_soft,
    sample_soft_assignment,
)
from dpcfl.privacy.accountant import selection_rounds
from dpcfl.registry import Registry

logger = logging.getLogger(__name__)

Runner = Callable[[ExperimentConfig, FederatedDataset, int], RunResult]

ALGORITHM_RUNNERS: Registry[Runner] = Registry("algorithm")


def algorithm(name: str) -> Callable[[Runner], Runner]:
    """registers a runner under an algorithm name."""

    def decorator(func: Runner) -> Runner:
        ALGORITHM_RUNNERS.register(name, func)
        return func

    return decorator


def run_algorithm(
    name: str, config: ExperimentConfig, dataset: FederatedDataset, seed: int
) -> RunResult:
    """runs the algorithm registered under name."""
    return ALGORITHM_RUNNERS.get(name)(config, dataset, seed)


def _known_clusters(config: ExperimentConfig, dataset: FederatedDataset) -> int:
    # baselines that need M take the true count when it is left to "auto"
    if config.num_clusters == "auto":
        return dataset.M
    return int(config.num_clusters)


def _n_select(config: ExperimentConfig, M: int) -> int:
    if M == 1 or config.nonprivate_selection:
        return 0
    return selection_rounds(config.rounds)


def planned_selection_rounds(
    name: str, config: ExperimentConfig, dataset: FederatedDataset
) -> int:
    """private selection rounds the privacy plan of an algorithm must cover."""
    if name == "rdpcfl":
        return 0 if config.nonprivate_selection else selection_rounds(config.rounds)
    if name == "ifca":
        return _n_select(config, _known_clusters(config, dataset))
    return 0


def _cluster_round(
    fed: Federation,
    models: ClusterModels,
    assignments: list[int],
    round: int,  # pylint: disable=redefined-builtin
) -> ClusterModels:
    for client, m in zip(fed.clients, assignments):
        client.assignment = m
    updates = fed.train_round([models.params[m] for m in assignments], round)
    return aggregate_cluster(models, updates, assignments)


def _run_ifca(
    name: str,
    config: ExperimentConfig,
    dataset: FederatedDataset,
    seed: int,
    M: int,
) -> RunResult:
    fed = Federation(
        config,
        dataset,
        seed,
        full_first_round=False,
        n_select_rounds=_n_select(config, M),
    )
    result = fed.new_result(name)
    window = selection_rounds(config.rounds)
    models = ClusterModels.uniform(fed.theta_init, M, round=1)
    assignments = [0] * fed.n

    for e in range(1, config.rounds + 1):
        if e <= window:
            assignments = [fed.select_cluster(c, models, e) for c in fed.clients]
            fed.count_selection(M)
        elif e == window + 1:
            for client in fed.clients:
                client.frozen = True
        models = _cluster_round(fed, models, assignments, e)
        result.records.append(
            fed.record(e, assignments, [models.params[m] for m in assignments])
        )
    return fed.finish(result)


@algorithm("ifca")
def run_ifca(
    config: ExperimentConfig, dataset: FederatedDataset, seed: int
) -> RunResult:
    """
    clients pick among M shared models by local accuracy, then stay put.

    Rounds 1..max(1, E // 10) run private accuracy-based selection; assignments
    are frozen afterwards. Every round ends with per-cluster averaging.
    """
    return _run_ifca("ifca", config, dataset, seed, _known_clusters(config, dataset))


@algorithm("global")
def run_global(
    config: ExperimentConfig, dataset: FederatedDataset, seed: int
) -> RunResult:
    """one model averaged over all clients (IFCA with a single cluster)."""
    return _run_ifca("global", config, dataset, seed, 1)


@algorithm("oracle")
def run_oracle(
    config: ExperimentConfig, dataset: FederatedDataset, seed: int
) -> RunResult:
    """per-cluster training with the true cluster of every client fixed from round 1."""
    fed = Federation(
        config, dataset, seed, full_first_round=False, n_select_rounds=0
    )
    result = fed.new_result("oracle")
    assignments = list(dataset.true_clusters)
    for client in fed.clients:
        client.frozen = True
    models = ClusterModels.uniform(fed.theta_init, dataset.M, round=1)
    for e in range(1, config.rounds + 1):
        models = _cluster_round(fed, models, assignments, e)
        result.records.append(
            fed.record(e, assignments, [models.params[m] for m in assignments])
        )
    return fed.finish(result)


def _run_personal(
    name: str,
    config: ExperimentConfig,
    dataset: FederatedDataset,
    seed: int,
    lam: float,
) -> RunResult:
    fed = Federation(
        config, dataset, seed, full_first_round=False, n_select_rounds=0
    )
    result = fed.new_result(name)
    personal: list[ParamVector] = [fed.theta_init.copy() for _ in fed.clients]
    ids = [c.client_id for c in fed.clients]

    for e in range(1, config.rounds + 1):
        center = np.mean(np.stack(personal), axis=0) if lam > 0 else None
        personal = [
            theta
            + fed.local_update(
                client, theta, e, prox_center=center, prox_weight=lam
            ).update
            for client, theta in zip(fed.clients, personal)
        ]
        result.records.append(fed.record(e, ids, personal, clustered=False))
    return fed.finish(result)


@algorithm("local")
def run_local(
    config: ExperimentConfig, dataset: FederatedDataset, seed: int
) -> RunResult:
    """every client trains its own model with DPSGD and never communicates."""
    return _run_personal("local", config, dataset, seed, 0.0)


@algorithm("mrmtl")
def run_mrmtl(
    config: ExperimentConfig,
    dataset: FederatedDataset,
    seed: int,
    lam: Optional[float] = None,
) -> RunResult:
    """
    mean-regularized multi-task learning.

    Each round every client runs its local epochs on f_i(theta) plus
    lam/2 * ||theta - theta_bar||^2, starting from its personal model, where
    theta_bar is the mean of all personal models at the start of the round.
    Only the data term is clipped and noised. lam = 0 is local training.

    Args:
        config: experiment configuration
        dataset: federated task
        seed: master seed
        lam: regularization strength (defaults to config.mrmtl_lambda)

    Returns:
        run trace
    """
    strength = config.mrmtl_lambda if lam is None else lam
    if strength < 0:
        raise ParameterError(f"lambda must be >= 0, got {strength}")
    return _run_personal("mrmtl", config, dataset, seed, strength)


def first_round_clustering(
    fed: Federation,
) -> tuple[npt.NDArray[np.float64], GmmFit, ConfidenceReport]:
    """
    runs the first round from theta_init and fits the mixture on its updates.

    Returns:
        stacked updates, the fit (M chosen by MSS when num_clusters is "auto")
        and its confidence report
    """
    config = fed.config
    first = fed.train_round([fed.theta_init] * fed.n, 1)
    points = np.stack([u.update for u in first])
    stream = derive_stream(fed.seed, SERVER_ID, 1, StreamTag.GMM_INIT)
    if config.num_clusters == "auto":
        candidates = [M for M in config.cluster_candidates if M <= fed.n]
        if not candidates:
            candidates = [min(2, fed.n)]
            logger.warning(
                "no candidate cluster count fits %d client(s), using M=%d",
                fed.n,
                candidates[0],
            )
        scored = score_cluster_counts(points, candidates, stream)
        fit, report = scored[best_cluster_count(scored)]
        return points, fit, report
    fit = fit_gmm(points, min(int(config.num_clusters), fed.n), stream)
    return points, fit, confidence(fit)


@dataclass(frozen=True)
class FirstRoundStats:
    """what one first round of R-DPCFL produced, before any cluster training."""

    points: npt.NDArray[np.float64]  # (n, p) updates
    num_clusters: int
    em_iterations: int
    mss: float
    mpo: float
    ari: float  # GMM labels against the true clusters
    N: int  # first client's train size
    z: float  # first client's calibrated noise scale
    p: int

    @property
    def clustering_correct(self) -> bool:
        """GMM labels equal the true clusters up to relabeling."""
        return math.isclose(self.ari, 1.0, abs_tol=1e-12)


def first_round_stats(
    config: ExperimentConfig, dataset: FederatedDataset, seed: int
) -> FirstRoundStats:
    """
    calibrates R-DPCFL's privacy plan and runs only its first-round clustering.

    Raises:
        CalibrationError: if any client's budget cannot be met
    """
    fed = Federation(
        config,
        dataset,
        seed,
        full_first_round=True,
        n_select_rounds=planned_selection_rounds("rdpcfl", config, dataset),
    )
    points, fit, report = first_round_clustering(fed)
    return FirstRoundStats(
        points=points,
        num_clusters=fit.M,
        em_iterations=fit.em_iterations,
        mss=report.mss,
        mpo=report.mpo,
        ari=adjusted_rand(fit.labels(), dataset.true_clusters),
        N=fed.clients[0].N,
        z=fed.clients[0].z,
        p=fed.model.param_dim(),
    )


@algorithm("rdpcfl")
def run_rdpcfl(
    config: ExperimentConfig, dataset: FederatedDataset, seed: int
) -> RunResult:
    """
    robust differentially private clustered federated learning.

    Round 1: every client runs DPSGD with its first-round batch size from
    theta_init; the server fits a spherical GMM on the updates (choosing M by
    MSS when num_clusters is "auto") and sets the switch round E_c from the
    fit's MPO. Cluster models then restart at theta_init.
    Rounds 2..E_c: each client draws its cluster from its responsibilities.
    Rounds E_c+1..E_c+max(1, E // 10): private accuracy-based selection.
    Later rounds keep the last selection.

    Args:
        config: experiment configuration
        dataset: federated task
        seed: master seed

    Returns:
        run trace with the first-round summary attached

    Raises:
        CalibrationError: if the budget cannot cover training plus selection
    """
    fed = Federation(
        config,
        dataset,
        seed,
        full_first_round=True,
        n_select_rounds=planned_selection_rounds("rdpcfl", config, dataset),
    )
    result = fed.new_result("rdpcfl")

    _, fit, report = first_round_clustering(fed)
    M = fit.M
    E_c = switch_round(report.mpo, config.rounds)
    result.first_round = FirstRoundSummary(
        num_clusters=M,
        mss=report.mss,
        mpo=report.mpo,
        switch_round=E_c,
        em_iterations=fit.em_iterations,
    )
    logger.info(
        "round 1: M=%d MSS=%.3f MPO=%.4f E_c=%d (%d EM iterations)",
        M,
        report.mss,
        report.mpo,
        E_c,
        fit.em_iterations,
    )

    labels = [int(m) for m in fit.labels()]
    result.records.append(fed.record(1, labels, [fed.theta_init] * fed.n))

    models = ClusterModels.uniform(fed.theta_init, M, round=2)
    window_end = E_c + selection_rounds(config.rounds)
    assignments = labels
    for e in range(2, config.rounds + 1):
        if e <= E_c:
            if config.soft_weights:
                assignments = labels
            else:
                assignments = [
                    sample_soft_assignment(
                        fit.responsibilities[i],
                        derive_stream(seed, c.client_id, e, StreamTag.SOFT_ASSIGN),
                    )
                    for i, c in enumerate(fed.clients)
                ]
        elif e <= window_end:
            assignments = [fed.select_cluster(c, models, e) for c in fed.clients]
            fed.count_selection(M)
        elif e == window_end + 1:
            for client in fed.clients:
                client.frozen = True

        if e <= E_c and config.soft_weights:
            for client, m in zip(fed.clients, assignments):
                client.assignment = m
            updates = fed.train_round([models.params[m] for m in assignments], e)
            models = aggregate_soft(models, updates, fit.responsibilities)
        else:
            models = _cluster_round(fed, models, assignments, e)
        result.records.append(
            fed.record(e, assignments, [models.params[m] for m in assignments])
        )
    return fed.finish(result)
