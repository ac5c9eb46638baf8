"""tests for synthetic federated tasks."""

from pathlib import Path

import numpy as np
import pytest

from dpcfl.core.config import DatasetSpec
from dpcfl.core.models import Dataset
from dpcfl.data.loader import load_dataset
from dpcfl.data.synthetic import (
    apply_concept_shift,
    apply_covariate_shift,
    apply_shift,
    build_federated_dataset,
    class_means,
    generate_base_task,
    hold_out_validation,
    split_train_test,
)
from dpcfl.errors import ParameterError
from dpcfl.exporters.dataset import write_federated_dataset


def test_class_means_have_margin_norm() -> None:
    """every center sits at distance margin from the origin."""
    means = class_means(0, d=6, C=4, margin=3.0)

    assert means.shape == (4, 6)
    np.testing.assert_allclose(np.linalg.norm(means, axis=1), 3.0)
    # orthogonal when C <= d
    gram = means @ means.T
    np.testing.assert_allclose(gram - np.diag(np.diag(gram)), 0.0, atol=1e-9)


def test_class_means_with_more_classes_than_dimensions() -> None:
    """centers are still normalized when they cannot be orthogonal."""
    means = class_means(1, d=2, C=5, margin=2.0)

    np.testing.assert_allclose(np.linalg.norm(means, axis=1), 2.0)


def test_base_task_is_balanced() -> None:
    """labels cycle through every class."""
    data = generate_base_task(0, d=4, C=3, samples_per_client=30)

    assert data.x.shape == (30, 4)
    assert np.bincount(data.y).tolist() == [10, 10, 10]


@pytest.mark.parametrize(
    "kwargs",
    [{"d": 1}, {"C": 1}, {"samples_per_client": 0}, {"margin": 0.0}],
)
def test_base_task_rejects_bad_arguments(kwargs: dict[str, float]) -> None:
    """dimension, class count, size and margin are checked."""
    args: dict[str, float] = {"d": 4, "C": 3, "samples_per_client": 10, "margin": 5.0}
    args.update(kwargs)

    with pytest.raises(ParameterError):
        generate_base_task(0, **args)  # type: ignore[arg-type]


def test_covariate_shift_rotates_pairs() -> None:
    """k = 1 maps each pair (a, b) to (-b, a)."""
    x = np.array([[1.0, 2.0, 3.0, 4.0]])

    assert apply_covariate_shift(x, 1).tolist() == [[-2.0, 1.0, -4.0, 3.0]]
    assert apply_covariate_shift(x, 2).tolist() == [[-1.0, -2.0, -3.0, -4.0]]


def test_covariate_shift_has_period_four() -> None:
    """four quarter turns are the identity and norms are preserved."""
    x = np.random.default_rng(0).normal(size=(5, 6))

    np.testing.assert_array_equal(apply_covariate_shift(x, 4), x)
    np.testing.assert_array_equal(
        apply_covariate_shift(apply_covariate_shift(x, 1), 3), x
    )
    np.testing.assert_allclose(
        np.linalg.norm(apply_covariate_shift(x, 3), axis=1), np.linalg.norm(x, axis=1)
    )


def test_covariate_shift_needs_even_dimension() -> None:
    """rotation pairs up coordinates."""
    with pytest.raises(ParameterError):
        apply_covariate_shift(np.zeros((2, 3)), 1)


def test_concept_shift_offsets_labels() -> None:
    """labels move by k modulo C."""
    assert apply_concept_shift([0, 1, 2], 1, 3).tolist() == [1, 2, 0]
    assert apply_concept_shift([0, 1, 2], 3, 3).tolist() == [0, 1, 2]
    with pytest.raises(ParameterError):
        apply_concept_shift([3], 1, 3)


def test_apply_shift_rejects_unknown_kind() -> None:
    """only covariate and concept shifts exist."""
    data = Dataset(np.zeros((1, 2)), np.zeros(1, dtype=np.int64))

    with pytest.raises(ParameterError):
        apply_shift(data, "label-noise", 1, 3)


def test_split_train_test() -> None:
    """leading rows train, trailing rows test."""
    data = Dataset(np.arange(20, dtype=np.float64).reshape(10, 2), np.arange(10))

    train, test = split_train_test(data, 0.8)

    assert len(train) == 8
    assert test.y.tolist() == [8, 9]
    with pytest.raises(ParameterError):
        split_train_test(data, 1.0)


def test_federated_dataset_layout() -> None:
    """clients are numbered cluster by cluster."""
    dataset = build_federated_dataset(
        seed=0, cluster_sizes=(1, 2, 3), d=4, C=3, samples_per_client=20
    )

    assert len(dataset.clients) == 6
    assert dataset.true_clusters == (0, 1, 1, 2, 2, 2)
    assert [c.client_id for c in dataset.clients] == list(range(6))
    assert all(len(c.train) == 16 and len(c.test) == 4 for c in dataset.clients)
    assert dataset.minority_cluster == 0


def test_federated_dataset_is_deterministic() -> None:
    """the same seed gives identical data; another seed does not."""
    args = {"cluster_sizes": (2, 2), "d": 4, "C": 3, "samples_per_client": 20}
    first = build_federated_dataset(seed=3, **args)  # type: ignore[arg-type]
    second = build_federated_dataset(seed=3, **args)  # type: ignore[arg-type]
    other = build_federated_dataset(seed=4, **args)  # type: ignore[arg-type]

    for a, b in zip(first.clients, second.clients):
        np.testing.assert_array_equal(a.train.x, b.train.x)
        np.testing.assert_array_equal(a.test.y, b.test.y)
    assert not np.array_equal(first.clients[0].train.x, other.clients[0].train.x)


def test_concept_shift_keeps_features() -> None:
    """concept-shifted clusters share the feature law and differ in labels."""
    covariate = build_federated_dataset(
        seed=0, cluster_sizes=(1, 1), shift="covariate", d=4, C=3, samples_per_client=12
    )
    concept = build_federated_dataset(
        seed=0, cluster_sizes=(1, 1), shift="concept", d=4, C=3, samples_per_client=12
    )

    shifted = concept.clients[1]
    np.testing.assert_array_equal(
        shifted.train.x, apply_covariate_shift(covariate.clients[1].train.x, 3)
    )
    np.testing.assert_array_equal(
        shifted.train.y, (covariate.clients[1].train.y + 1) % 3
    )


def test_federated_dataset_rejects_bad_sizes() -> None:
    """cluster sizes must be positive."""
    with pytest.raises(ParameterError):
        build_federated_dataset(seed=0, cluster_sizes=(2, 0))


def test_load_dataset_generates_from_spec() -> None:
    """a DatasetSpec without a path is generated from its seed."""
    spec = DatasetSpec(seed=1, cluster_sizes=(1, 1), d=2, C=2, samples_per_client=10)

    dataset = load_dataset(spec)

    assert dataset.seed == 1
    assert len(dataset.clients) == 2
    assert load_dataset(spec) is dataset


def test_load_dataset_reads_files(tmp_path: Path) -> None:
    """a DatasetSpec with a path loads the written files."""
    written = build_federated_dataset(
        seed=2, cluster_sizes=(1, 1), d=2, C=2, samples_per_client=10
    )
    write_federated_dataset(written, tmp_path)

    loaded = load_dataset(DatasetSpec(path=str(tmp_path)))

    assert loaded.seed == 2
    np.testing.assert_array_equal(loaded.clients[1].train.x, written.clients[1].train.x)


def test_hold_out_validation_splits_train_only() -> None:
    """validation rows come from the tail of train; test rows are never used."""
    dataset = build_federated_dataset(
        seed=1, cluster_sizes=(1, 2), d=4, C=3, samples_per_client=50
    )

    tuned = hold_out_validation(dataset, 0.25)

    assert tuned.true_clusters == dataset.true_clusters
    for before, after in zip(dataset.clients, tuned.clients):
        assert len(after.train) == 30
        assert len(after.test) == 10
        np.testing.assert_array_equal(after.train.x, before.train.x[:30])
        np.testing.assert_array_equal(after.test.x, before.train.x[30:])


@pytest.mark.parametrize("fraction", [0.0, 1.0])
def test_hold_out_validation_needs_open_fraction(fraction: float) -> None:
    """the fraction lies strictly between zero and one."""
    dataset = build_federated_dataset(
        seed=1, cluster_sizes=(1,), d=4, C=3, samples_per_client=20
    )

    with pytest.raises(ParameterError):
        hold_out_validation(dataset, fraction)
