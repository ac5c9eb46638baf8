"""resolves the dataset section of a config to a federated dataset."""

import functools
from pathlib import Path

from dpcfl.core.config import DatasetSpec
from dpcfl.core.models import FederatedDataset
from dpcfl.data.synthetic import build_federated_dataset
from dpcfl.exporters.dataset import load_federated_dataset


@functools.lru_cache(maxsize=8)
def load_dataset(spec: DatasetSpec) -> FederatedDataset:
    """
    obtains the federated dataset a config describes.

    Args:
        spec: dataset section of a config

    Returns:
        dataset loaded from spec.path, or generated from spec's seed
    """
    if spec.path is not None:
        return load_federated_dataset(Path(spec.path))
    return build_federated_dataset(
        seed=spec.seed,
        cluster_sizes=spec.cluster_sizes,
        shift=spec.shift,
        d=spec.d,
        C=spec.C,
        samples_per_client=spec.samples_per_client,
        margin=spec.margin,
        train_fraction=spec.train_fraction,
    )
