"""tests for R-DPCFL and the baseline algorithms."""

from collections.abc import Callable
from dataclasses import replace

import numpy as np
import pytest
from scipy.spatial.distance import pdist

from dpcfl.clustering.confidence import adjusted_rand
from dpcfl.core.config import ALGORITHMS, ExperimentConfig
from dpcfl.core.models import FederatedDataset, RunResult
from dpcfl.data.loader import load_dataset
from dpcfl.errors import ParameterError
from dpcfl.federation.algorithms import (
    ALGORITHM_RUNNERS,
    first_round_clustering,
    planned_selection_rounds,
    run_algorithm,
    run_mrmtl,
)
from dpcfl.federation.engine import Federation


def _trace(result: RunResult) -> list[tuple[float, float, tuple[int, ...]]]:
    return [(r.mean_accuracy, r.privacy_spent, r.assignments) for r in result.records]


def test_every_configurable_algorithm_is_registered() -> None:
    """config names and runner names agree."""
    assert sorted(ALGORITHMS) == ALGORITHM_RUNNERS.names()


def test_unknown_algorithm() -> None:
    """unknown names raise ParameterError."""
    with pytest.raises(ParameterError):
        run_algorithm("fedavg", ExperimentConfig(), None, 0)  # type: ignore[arg-type]


@pytest.mark.parametrize("name", ALGORITHMS)
def test_runs_produce_one_record_per_round(
    name: str, tiny_config: ExperimentConfig, tiny_dataset: FederatedDataset
) -> None:
    """every algorithm reports rounds 1..E within budget."""
    result = run_algorithm(name, tiny_config, tiny_dataset, seed=0)

    assert result.algorithm == name
    assert [r.round for r in result.records] == [1, 2, 3, 4]
    assert all(0.0 <= r.mean_accuracy <= 1.0 for r in result.records)
    spends = [r.privacy_spent for r in result.records]
    assert spends == sorted(spends)
    assert max(result.final_privacy) <= tiny_config.epsilon + 1e-9
    assert len(result.noise_scales) == len(tiny_dataset.clients)


@pytest.mark.parametrize("name", ALGORITHMS)
def test_runs_are_deterministic(
    name: str, tiny_config: ExperimentConfig, tiny_dataset: FederatedDataset
) -> None:
    """the same seed reproduces the whole trace."""
    first = run_algorithm(name, tiny_config, tiny_dataset, seed=3)
    second = run_algorithm(name, tiny_config, tiny_dataset, seed=3)

    assert _trace(first) == _trace(second)


def test_global_is_single_cluster_ifca(
    tiny_config: ExperimentConfig, tiny_dataset: FederatedDataset
) -> None:
    """IFCA with one cluster is the global model."""
    ifca = run_algorithm("ifca", replace(tiny_config, num_clusters=1), tiny_dataset, 1)
    global_ = run_algorithm("global", tiny_config, tiny_dataset, 1)

    assert _trace(ifca) == _trace(global_)
    assert ifca.noise_scales == global_.noise_scales


def test_mrmtl_without_regularization_is_local(
    tiny_config: ExperimentConfig, tiny_dataset: FederatedDataset
) -> None:
    """lambda = 0 decouples the clients."""
    local = run_algorithm("local", tiny_config, tiny_dataset, 2)
    mrmtl = run_mrmtl(tiny_config, tiny_dataset, 2, lam=0.0)

    assert _trace(local) == _trace(mrmtl)


def test_mrmtl_rejects_negative_lambda(
    tiny_config: ExperimentConfig, tiny_dataset: FederatedDataset
) -> None:
    """lambda must be non-negative."""
    with pytest.raises(ParameterError):
        run_mrmtl(tiny_config, tiny_dataset, 0, lam=-1.0)


def test_global_with_one_client_is_local(tiny_config: ExperimentConfig) -> None:
    """a one-client federation averages nothing."""
    config = replace(
        tiny_config, dataset=replace(tiny_config.dataset, cluster_sizes=(1,))
    )
    dataset = load_dataset(config.dataset)
    local = run_algorithm("local", config, dataset, 0)
    global_ = run_algorithm("global", config, dataset, 0)

    assert [r.client_accuracy for r in local.records] == [
        r.client_accuracy for r in global_.records
    ]


def test_oracle_is_always_correctly_clustered(
    tiny_config: ExperimentConfig, tiny_dataset: FederatedDataset
) -> None:
    """the oracle uses the true clusters from the start."""
    result = run_algorithm("oracle", tiny_config, tiny_dataset, 0)

    assert all(r.clustering_correct for r in result.records)
    assert all(r.assignments == tiny_dataset.true_clusters for r in result.records)


def test_personal_models_never_count_as_clustered(
    tiny_config: ExperimentConfig, tiny_dataset: FederatedDataset
) -> None:
    """local training has no cluster structure."""
    result = run_algorithm("local", tiny_config, tiny_dataset, 0)

    assert not any(r.clustering_correct for r in result.records)


def test_ifca_freezes_after_selection_window(
    tiny_config: ExperimentConfig, tiny_dataset: FederatedDataset
) -> None:
    """assignments stop changing after max(1, E // 10) rounds."""
    result = run_algorithm("ifca", tiny_config, tiny_dataset, 0)

    frozen = [r.assignments for r in result.records[1:]]
    assert all(a == result.records[0].assignments for a in frozen)


def test_rdpcfl_reports_first_round(
    tiny_config: ExperimentConfig, tiny_dataset: FederatedDataset
) -> None:
    """R-DPCFL attaches MSS, MPO and the switch round."""
    result = run_algorithm("rdpcfl", tiny_config, tiny_dataset, 0)
    first = result.first_round

    assert first is not None
    assert first.num_clusters == 2
    assert 0.0 <= first.mpo <= 1.0
    assert 1 <= first.switch_round <= tiny_config.rounds // 2
    assert first.em_iterations >= 1


def test_rdpcfl_freezes_after_selection(
    tiny_config: ExperimentConfig, tiny_dataset: FederatedDataset
) -> None:
    """assignments are fixed once the selection window closes."""
    config = replace(tiny_config, rounds=8)
    result = run_algorithm("rdpcfl", config, tiny_dataset, 0)
    assert result.first_round is not None
    window_end = result.first_round.switch_round + 1

    tail = [r.assignments for r in result.records if r.round > window_end]
    assert tail
    assert all(a == tail[0] for a in tail)


def test_rdpcfl_soft_weights_run(
    tiny_config: ExperimentConfig, tiny_dataset: FederatedDataset
) -> None:
    """responsibility-weighted aggregation runs end to end."""
    result = run_algorithm(
        "rdpcfl", replace(tiny_config, soft_weights=True), tiny_dataset, 0
    )

    assert len(result.records) == tiny_config.rounds


def test_rdpcfl_auto_cluster_count(
    tiny_config: ExperimentConfig, tiny_dataset: FederatedDataset
) -> None:
    """'auto' picks M among the candidates."""
    result = run_algorithm(
        "rdpcfl", replace(tiny_config, num_clusters="auto"), tiny_dataset, 0
    )

    assert result.first_round is not None
    assert result.first_round.num_clusters in (2, 3)


def test_first_round_clustering_shapes(
    tiny_config: ExperimentConfig, tiny_dataset: FederatedDataset
) -> None:
    """one update per client and one responsibility row per client."""
    fed = Federation(
        tiny_config, tiny_dataset, 0, full_first_round=True, n_select_rounds=1
    )

    points, fit, report = first_round_clustering(fed)

    assert points.shape == (5, fed.model.param_dim())
    assert fit.responsibilities.shape == (5, 2)
    assert report.pairwise_ss.shape == (2, 2)
    np.testing.assert_allclose(fit.responsibilities.sum(axis=1), 1.0)


def test_planned_selection_rounds(
    tiny_config: ExperimentConfig, tiny_dataset: FederatedDataset
) -> None:
    """only selecting algorithms plan private selection rounds."""
    config = replace(tiny_config, rounds=30)

    assert planned_selection_rounds("rdpcfl", config, tiny_dataset) == 3
    assert planned_selection_rounds("ifca", config, tiny_dataset) == 3
    assert planned_selection_rounds("ifca", replace(config, num_clusters=1), tiny_dataset) == 0
    assert planned_selection_rounds("global", config, tiny_dataset) == 0
    assert planned_selection_rounds("oracle", config, tiny_dataset) == 0
    assert (
        planned_selection_rounds(
            "rdpcfl", replace(config, nonprivate_selection=True), tiny_dataset
        )
        == 0
    )


def test_auto_cluster_count_falls_back_when_no_candidate_fits(
    tiny_config: ExperimentConfig, tiny_dataset: FederatedDataset
) -> None:
    """with more candidate clusters than clients, 'auto' fits two components."""
    config = replace(tiny_config, num_clusters="auto", cluster_candidates=(8,))
    fed = Federation(config, tiny_dataset, 0, full_first_round=True, n_select_rounds=1)

    _, fit, report = first_round_clustering(fed)

    assert fit.M == 2
    assert report.pairwise_ss.shape == (2, 2)
    result = run_algorithm("rdpcfl", config, tiny_dataset, 0)
    assert result.first_round is not None
    assert result.first_round.num_clusters == 2


def _spread_per_round(
    monkeypatch: pytest.MonkeyPatch, run: Callable[[], RunResult]
) -> list[float]:
    """mean pairwise distance between the models clients use, round by round."""
    spreads: list[float] = []
    record = Federation.record

    def spying_record(self, round_, assignments, client_models, clustered=True):  # type: ignore[no-untyped-def]
        spreads.append(float(np.mean(pdist(np.stack(client_models)))))
        return record(self, round_, assignments, client_models, clustered)

    with monkeypatch.context() as patch:
        patch.setattr(Federation, "record", spying_record)
        run()
    return spreads


def test_mrmtl_regularization_keeps_personal_models_together(
    monkeypatch: pytest.MonkeyPatch,
    tiny_config: ExperimentConfig,
    tiny_dataset: FederatedDataset,
) -> None:
    """with a large lambda personal models stay closer than local ones in every round."""
    config = replace(tiny_config, rounds=6)

    local = _spread_per_round(
        monkeypatch, lambda: run_algorithm("local", config, tiny_dataset, 0)
    )
    pulled = _spread_per_round(
        monkeypatch, lambda: run_mrmtl(config, tiny_dataset, 0, lam=5.0)
    )

    assert len(local) == len(pulled) == config.rounds
    assert all(p < q for p, q in zip(pulled, local))
    assert pulled[-1] < 0.5 * local[-1]


@pytest.fixture(scope="module")
def default_runs() -> dict[str, list[RunResult]]:
    """oracle, R-DPCFL, global and local on the default task at eps=5, seeds 0 and 1."""
    config = ExperimentConfig(epsilon=5.0)
    dataset = load_dataset(config.dataset)
    return {
        name: [run_algorithm(name, config, dataset, seed) for seed in (0, 1)]
        for name in ("oracle", "rdpcfl", "global", "local")
    }


def _mean_final(runs: list[RunResult]) -> float:
    return float(np.mean([r.final.mean_accuracy for r in runs]))


@pytest.mark.slow
def test_default_task_accuracy_ordering(default_runs: dict[str, list[RunResult]]) -> None:
    """oracle >= rdpcfl >= max(global, local) - 1pp in mean final accuracy."""
    oracle = _mean_final(default_runs["oracle"])
    rdpcfl = _mean_final(default_runs["rdpcfl"])
    baseline = max(_mean_final(default_runs["global"]), _mean_final(default_runs["local"]))

    assert oracle >= rdpcfl
    assert rdpcfl >= baseline - 0.01


@pytest.mark.slow
def test_oracle_beats_global_on_separable_task(
    default_runs: dict[str, list[RunResult]],
) -> None:
    """one model per true cluster outperforms a single shared model."""
    for oracle, global_ in zip(default_runs["oracle"], default_runs["global"]):
        assert oracle.final.mean_accuracy >= global_.final.mean_accuracy


@pytest.mark.slow
def test_rdpcfl_recovers_clusters_when_first_round_is_confident(
    default_runs: dict[str, list[RunResult]],
) -> None:
    """first-round MSS >= 3 ends with the true clusters up to relabeling."""
    truth = load_dataset(ExperimentConfig().dataset).true_clusters
    for result in default_runs["rdpcfl"]:
        assert result.first_round is not None
        assert result.first_round.mss >= 3.0
        assert adjusted_rand(result.final.assignments, truth) == pytest.approx(1.0)
        assert result.final.clustering_correct
