"""tests for shared data models."""

import numpy as np
import pytest

from dpcfl.core.models import (
    ClientData,
    ClusterModels,
    Dataset,
    FederatedDataset,
    RunResult,
)
from dpcfl.errors import ParameterError


def _dataset(n: int, d: int = 2) -> Dataset:
    return Dataset(np.arange(n * d, dtype=np.float64).reshape(n, d), np.zeros(n, dtype=np.int64))


def test_dataset_shape_checks() -> None:
    """x and y must agree on the number of examples."""
    with pytest.raises(ParameterError):
        Dataset(np.zeros((3, 2)), np.zeros(2, dtype=np.int64))
    with pytest.raises(ParameterError):
        Dataset(np.zeros(3), np.zeros(3, dtype=np.int64))


def test_dataset_subset() -> None:
    """subset keeps the selected rows in the given order."""
    data = _dataset(4)
    picked = data.subset(np.array([3, 0]))

    assert len(picked) == 2
    assert picked.dim == 2
    assert picked.x[0].tolist() == [6.0, 7.0]
    assert picked.x[1].tolist() == [0.0, 1.0]


def test_federated_dataset_properties() -> None:
    """M, true clusters and minority cluster come from the cluster sizes."""
    clients = tuple(
        ClientData(i, cluster, _dataset(3), _dataset(1))
        for i, cluster in enumerate([0, 0, 1, 2, 2])
    )
    dataset = FederatedDataset(
        clients=clients, d=2, C=2, cluster_sizes=(2, 1, 2), shift="covariate", seed=0
    )

    assert dataset.M == 3
    assert dataset.true_clusters == (0, 0, 1, 2, 2)
    assert dataset.minority_cluster == 1


def test_minority_cluster_tie_takes_lowest_index() -> None:
    """the first of equally small clusters is the minority."""
    dataset = FederatedDataset(
        clients=(), d=2, C=2, cluster_sizes=(4, 2, 2), shift="concept", seed=0
    )

    assert dataset.minority_cluster == 1


def test_cluster_models_uniform() -> None:
    """uniform() tiles one initialization M times."""
    models = ClusterModels.uniform(np.array([1.0, 2.0]), 3, round=1)

    assert models.M == 3
    assert models.round == 1
    assert models.params.tolist() == [[1.0, 2.0]] * 3


def test_run_result_final_requires_records() -> None:
    """a run without rounds has no final record."""
    result = RunResult(algorithm="local", seed=0, epsilon=1.0, noise_scales=())

    with pytest.raises(ParameterError):
        _ = result.final
