"""per-sample clipped, noise-injected local training (DPSGD)."""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import numpy.typing as npt

from dpcfl.core.mathcore import (
    ParamVector,
    StreamLike,
    StreamTag,
    as_generator,
    as_param_vector,
    derive_stream,
    l2_norm,
)
from dpcfl.core.models import Dataset
from dpcfl.errors import ParameterError
from dpcfl.training.predictors import Predictor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingStreams:
    """random streams consumed by one local training call."""

    batches: np.random.Generator
    noise: np.random.Generator

    @classmethod
    def for_round(
        cls, master_seed: int, client_id: int, round: int  # pylint: disable=redefined-builtin
    ) -> "TrainingStreams":
        """derives the batch-sampling and DP-noise streams of a client round."""
        return cls(
            batches=derive_stream(
                master_seed, client_id, round, StreamTag.BATCH_SAMPLING
            ).generator(),
            noise=derive_stream(
                master_seed, client_id, round, StreamTag.DP_NOISE
            ).generator(),
        )


@dataclass(frozen=True)
class LocalTrainReport:
    """result of one DPSGD call."""

    update: ParamVector
    steps_taken: int
    start_params: ParamVector


def _check_threshold(c: float) -> None:
    if not c > 0:
        raise ParameterError(f"clipping threshold must be positive, got {c}")


def clip(v: ParamVector, c: float) -> ParamVector:
    """
    projects v onto the l2 ball of radius c.

    Args:
        v: vector to clip
        c: clipping threshold (math.inf disables clipping)

    Returns:
        v if its norm is at most c, else v scaled to norm c
    """
    _check_threshold(c)
    norm = l2_norm(v)
    if norm <= c:
        return np.array(v, dtype=np.float64)
    return np.asarray(v * (c / norm), dtype=np.float64)


def clip_rows(grads: npt.NDArray[np.float64], c: float) -> npt.NDArray[np.float64]:
    """clips every row of a (b, p) gradient matrix to norm c."""
    _check_threshold(c)
    if math.isinf(c):
        return grads
    norms = np.linalg.norm(grads, axis=1)
    factors = np.minimum(1.0, c / np.maximum(norms, np.finfo(np.float64).tiny))
    return np.asarray(grads * factors[:, None], dtype=np.float64)


def noise_std(c: float, z: float) -> float:
    """sigma_DP = c * z, with zero noise when z is zero."""
    if z < 0:
        raise ParameterError(f"noise scale must be >= 0, got {z}")
    if z == 0:
        return 0.0
    if math.isinf(c):
        raise ParameterError("noise needs a finite clipping threshold")
    return c * z


def dp_batch_gradient(
    model: Predictor,
    params: ParamVector,
    batch: Dataset,
    c: float,
    sigma_dp: float,
    stream: StreamLike,
) -> ParamVector:
    """
    computes (1/b) [sum_j clip(g_j, c) + N(0, sigma_dp^2 I)].

    Args:
        model: predictor providing per-sample gradients
        params: current parameters
        batch: non-empty batch
        c: clipping threshold
        sigma_dp: noise standard deviation
        stream: DP noise stream

    Returns:
        noisy batch gradient
    """
    if len(batch) == 0:
        raise ParameterError("batch is empty")
    if sigma_dp < 0:
        raise ParameterError(f"noise std must be >= 0, got {sigma_dp}")

    grads = clip_rows(model.per_sample_gradients(params, batch.x, batch.y), c)
    total = grads.sum(axis=0)
    if sigma_dp > 0:
        total = total + as_generator(stream).normal(0.0, sigma_dp, size=total.shape)
    return np.asarray(total / len(batch), dtype=np.float64)


def dpsgd_local(
    model: Predictor,
    start: ParamVector,
    dataset: Dataset,
    b: int,
    K: int,
    eta: float,
    c: float,
    z: float,
    streams: TrainingStreams,
    prox_center: Optional[ParamVector] = None,
    prox_weight: float = 0.0,
) -> LocalTrainReport:
    """
    runs K epochs of DPSGD from start and returns the model update.

    Each epoch draws a fresh permutation and takes ceil(N/b) steps; step t uses
    permutation positions (t*b + j) mod N, so every batch holds exactly b examples.
    When prox_center is given, prox_weight * (theta - prox_center) is added to the
    privatized gradient.

    Args:
        model: predictor
        start: initial parameters
        dataset: local training data
        b: batch size in [1, N]
        K: local epochs
        eta: learning rate
        c: clipping threshold
        z: noise scale
        streams: batch-sampling and noise streams
        prox_center: optional proximal anchor
        prox_weight: proximal strength lambda >= 0

    Returns:
        report with update theta_final - start and step count
    """
    n = len(dataset)
    if not 1 <= b <= n:
        raise ParameterError(f"batch size must lie in [1, {n}], got {b}")
    if eta <= 0:
        raise ParameterError(f"learning rate must be positive, got {eta}")
    if K < 1:
        raise ParameterError(f"epochs must be >= 1, got {K}")
    if prox_weight < 0:
        raise ParameterError(f"proximal weight must be >= 0, got {prox_weight}")
    sigma = noise_std(c, z)

    theta = np.array(start, dtype=np.float64)
    steps_per_epoch = math.ceil(n / b)
    offsets = np.arange(b)
    steps = 0
    for _ in range(K):
        order = streams.batches.permutation(n)
        for t in range(steps_per_epoch):
            batch = dataset.subset(order[(t * b + offsets) % n])
            grad = dp_batch_gradient(model, theta, batch, c, sigma, streams.noise)
            if prox_center is not None and prox_weight > 0:
                grad = grad + prox_weight * (theta - prox_center)
            theta = theta - eta * grad
            steps += 1

    return LocalTrainReport(
        update=as_param_vector(theta - start), steps_taken=steps, start_params=np.array(start)
    )


def predicted_update_variance(
    K: int, N: int, eta: float, p: int, c: float, z: float, b: int
) -> float:
    """total variance of the DP noise in one round's update: K N eta^2 p c^2 z^2 / b^3."""
    if min(K, N, p, b) < 1 or eta <= 0 or c <= 0 or z < 0:
        raise ParameterError("variance prediction needs positive K, N, eta, p, c, b")
    return K * N * eta**2 * p * c**2 * z**2 / b**3
