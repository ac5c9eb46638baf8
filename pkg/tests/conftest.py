"""shared fixtures: a five-client task small enough to run every algorithm quickly."""

import pytest

from dpcfl.core.config import DatasetSpec, ExperimentConfig
from dpcfl.core.models import FederatedDataset
from dpcfl.data.loader import load_dataset

TINY_SPEC = DatasetSpec(
    seed=0, cluster_sizes=(2, 3), d=4, C=3, samples_per_client=50
)


@pytest.fixture
def tiny_config() -> ExperimentConfig:
    """four rounds over two clusters of 40-example clients."""
    return ExperimentConfig(
        dataset=TINY_SPEC,
        rounds=4,
        b_rest=8,
        num_clusters=2,
        cluster_candidates=(2, 3),
        epsilon=5.0,
    )


@pytest.fixture
def tiny_dataset(tiny_config: ExperimentConfig) -> FederatedDataset:
    """the dataset tiny_config describes."""
    return load_dataset(tiny_config.dataset)
