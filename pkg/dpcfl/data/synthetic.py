"""synthetic clustered classification tasks with covariate or concept shift."""

import logging
from collections.abc import Sequence
from dataclasses import replace
from typing import Literal

import numpy as np
import numpy.typing as npt

from dpcfl.core.mathcore import SERVER_ID, StreamTag, derive_stream
from dpcfl.core.models import ClientData, Dataset, FederatedDataset
from dpcfl.errors import ParameterError

logger = logging.getLogger(__name__)

ShiftKind = Literal["covariate", "concept"]
SHIFT_KINDS: tuple[str, ...] = ("covariate", "concept")

DEFAULT_CLUSTER_SIZES: tuple[int, ...] = (3, 6, 6, 6)
DEFAULT_MARGIN = 5.0
DEFAULT_TRAIN_FRACTION = 0.8


def class_means(seed: int, d: int, C: int, margin: float) -> npt.NDArray[np.float64]:
    """class centers of norm margin; orthonormal directions when C <= d."""
    rng = derive_stream(seed, SERVER_ID, 0, StreamTag.DATA_GEN).generator()
    gaussian = rng.normal(size=(d, max(C, 1)))
    if C <= d:
        directions, _ = np.linalg.qr(gaussian)
        directions = directions[:, :C].T
    else:
        directions = gaussian.T / np.linalg.norm(gaussian.T, axis=1, keepdims=True)
    return np.asarray(margin * directions, dtype=np.float64)


def generate_base_task(
    seed: int,
    d: int,
    C: int,
    samples_per_client: int,
    margin: float = DEFAULT_MARGIN,
    client_id: int = SERVER_ID,
) -> Dataset:
    """
    draws a balanced C-class Gaussian-blob pool.

    Class centers depend on seed only, so every client of a task shares them;
    the samples come from the client's own stream.

    Args:
        seed: task seed
        d: feature dimension >= 2
        C: number of classes >= 2
        samples_per_client: pool size
        margin: norm of every class center (unit-variance noise around it)
        client_id: owner of the sample stream

    Returns:
        unshifted pool
    """
    if d < 2 or C < 2:
        raise ParameterError(f"need d >= 2 and C >= 2, got d={d}, C={C}")
    if samples_per_client < 1:
        raise ParameterError("samples_per_client must be >= 1")
    if margin <= 0:
        raise ParameterError(f"margin must be positive, got {margin}")

    means = class_means(seed, d, C, margin)
    rng = derive_stream(seed, client_id, 0, StreamTag.DATA_GEN).generator()
    labels = rng.permutation(np.arange(samples_per_client) % C).astype(np.int64)
    features = means[labels] + rng.normal(size=(samples_per_client, d))
    return Dataset(features.astype(np.float64), labels)


def apply_covariate_shift(x: npt.ArrayLike, k: int) -> npt.NDArray[np.float64]:
    """rotates every consecutive coordinate pair by k * 90 degrees."""
    features = np.asarray(x, dtype=np.float64)
    d = features.shape[-1]
    if d % 2:
        raise ParameterError(f"rotation needs an even dimension, got {d}")
    a = features[..., 0::2]
    b = features[..., 1::2]
    turns = k % 4
    if turns == 0:
        new_a, new_b = a, b
    elif turns == 1:
        new_a, new_b = -b, a
    elif turns == 2:
        new_a, new_b = -a, -b
    else:
        new_a, new_b = b, -a
    rotated = np.empty_like(features)
    rotated[..., 0::2] = new_a
    rotated[..., 1::2] = new_b
    return rotated


def apply_concept_shift(y: npt.ArrayLike, k: int, C: int) -> npt.NDArray[np.int64]:
    """relabels y as (y + k) mod C."""
    labels = np.asarray(y, dtype=np.int64)
    if C < 2:
        raise ParameterError(f"need C >= 2, got {C}")
    if np.any(labels < 0) or np.any(labels >= C):
        raise ParameterError(f"labels must lie in [0, {C})")
    return np.asarray((labels + k) % C, dtype=np.int64)


def apply_shift(data: Dataset, shift: str, k: int, C: int) -> Dataset:
    """applies cluster k's shift to a pool."""
    if shift == "covariate":
        return Dataset(apply_covariate_shift(data.x, k), data.y)
    if shift == "concept":
        return Dataset(data.x, apply_concept_shift(data.y, k, C))
    raise ParameterError(f"unknown shift '{shift}' (known: {', '.join(SHIFT_KINDS)})")


def split_train_test(
    data: Dataset, train_fraction: float = DEFAULT_TRAIN_FRACTION
) -> tuple[Dataset, Dataset]:
    """splits a pool into leading train rows and trailing test rows."""
    if not 0.0 < train_fraction < 1.0:
        raise ParameterError(f"train fraction must be in (0, 1), got {train_fraction}")
    cut = int(round(train_fraction * len(data)))
    indices = np.arange(len(data))
    return data.subset(indices[:cut]), data.subset(indices[cut:])


def build_federated_dataset(
    seed: int,
    cluster_sizes: Sequence[int] = DEFAULT_CLUSTER_SIZES,
    shift: str = "covariate",
    d: int = 16,
    C: int = 10,
    samples_per_client: int = 2000,
    margin: float = DEFAULT_MARGIN,
    train_fraction: float = DEFAULT_TRAIN_FRACTION,
) -> FederatedDataset:
    """
    builds a federated task where cluster k applies shift k to the base task.

    Args:
        seed: task seed
        cluster_sizes: clients per cluster; cluster 0 is listed first
        shift: "covariate" (rotation) or "concept" (label offset)
        d: feature dimension
        C: number of classes
        samples_per_client: examples per client before splitting
        margin: class-center norm
        train_fraction: share of each client's examples used for training

    Returns:
        federated dataset with clients numbered 0..n-1 cluster by cluster
    """
    if not cluster_sizes or any(size < 1 for size in cluster_sizes):
        raise ParameterError(f"cluster sizes must be positive, got {cluster_sizes}")
    if shift not in SHIFT_KINDS:
        raise ParameterError(f"unknown shift '{shift}' (known: {', '.join(SHIFT_KINDS)})")

    clients: list[ClientData] = []
    for cluster, size in enumerate(cluster_sizes):
        for _ in range(size):
            client_id = len(clients)
            pool = generate_base_task(
                seed, d, C, samples_per_client, margin, client_id=client_id
            )
            train, test = split_train_test(
                apply_shift(pool, shift, cluster, C), train_fraction
            )
            clients.append(ClientData(client_id, cluster, train, test))

    logger.debug(
        "generated %d clients over %d clusters (%s shift)",
        len(clients),
        len(cluster_sizes),
        shift,
    )
    return FederatedDataset(
        clients=tuple(clients),
        d=d,
        C=C,
        cluster_sizes=tuple(cluster_sizes),
        shift=shift,
        seed=seed,
    )


def hold_out_validation(
    dataset: FederatedDataset, validation_fraction: float
) -> FederatedDataset:
    """
    carves a validation set out of every client's train data.

    The trailing validation_fraction of each train set becomes the client's
    test set; the original test sets are dropped, so tuning never sees them.

    Raises:
        ParameterError: if a client would be left without train or validation rows
    """
    if not 0.0 < validation_fraction < 1.0:
        raise ParameterError(
            f"validation fraction must be in (0, 1), got {validation_fraction}"
        )
    clients = []
    for client in dataset.clients:
        train, validation = split_train_test(client.train, 1.0 - validation_fraction)
        if len(train) == 0 or len(validation) == 0:
            raise ParameterError(
                f"client {client.client_id} has too few train rows ({len(client.train)}) "
                f"for a {validation_fraction:g} validation split"
            )
        clients.append(replace(client, train=train, test=validation))
    return replace(dataset, clients=tuple(clients))
