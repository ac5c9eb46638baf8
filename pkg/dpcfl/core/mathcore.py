"""shared numerical primitives: seeded streams, Gaussian/Gumbel sampling, Q function."""

import hashlib
import math
import struct
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np
import numpy.typing as npt
from scipy import special

from dpcfl.errors import ParameterError

ParamVector = npt.NDArray[np.float64]

# client_id used for streams owned by the server
SERVER_ID = -1


class StreamTag(str, Enum):
    """purpose of a random stream; distinct tags never share draws."""

    BATCH_SAMPLING = "batch_sampling"
    DP_NOISE = "dp_noise"
    GUMBEL = "gumbel"
    GMM_INIT = "gmm_init"
    DATA_GEN = "data_gen"
    SOFT_ASSIGN = "soft_assign"
    MODEL_INIT = "model_init"


@dataclass(frozen=True)
class RngStream:
    """key of a reproducible random stream."""

    master_seed: int
    client_id: int
    round: int
    tag: StreamTag

    def key(self) -> int:
        """hashes the four fields into a 128-bit Philox key."""
        payload = struct.pack(
            "<qqq", self.master_seed, self.client_id, self.round
        ) + self.tag.value.encode("utf-8")
        digest = hashlib.blake2b(payload, digest_size=16).digest()
        return int.from_bytes(digest, "little")

    def generator(self) -> np.random.Generator:
        """returns a fresh generator positioned at the start of the stream."""
        return np.random.Generator(np.random.Philox(key=self.key()))


StreamLike = Union[RngStream, np.random.Generator]


def derive_stream(
    master_seed: int,
    client_id: int,
    round: int,  # pylint: disable=redefined-builtin
    tag: StreamTag,
) -> RngStream:
    """
    derives the stream for one (client, round, purpose) triple.

    Args:
        master_seed: experiment seed
        client_id: client index, or SERVER_ID for server-side randomness
        round: communication round (0 for pre-training draws)
        tag: purpose of the stream

    Returns:
        stream whose draws depend only on the four arguments
    """
    return RngStream(int(master_seed), int(client_id), int(round), StreamTag(tag))


def as_generator(stream: StreamLike) -> np.random.Generator:
    """returns a generator for a stream key, or the generator itself."""
    if isinstance(stream, RngStream):
        return stream.generator()
    return stream


def q_function(x: float) -> float:
    """tail probability of the standard normal, Q(x) = erfc(x/sqrt(2))/2."""
    if not math.isfinite(x):
        raise ParameterError(f"Q function needs a finite argument, got {x}")
    return float(0.5 * special.erfc(x / math.sqrt(2.0)))


def sample_gumbel(scale: float, stream: StreamLike) -> float:
    """draws one sample from Gumbel(0, scale)."""
    if scale <= 0:
        raise ParameterError(f"Gumbel scale must be positive, got {scale}")
    return float(as_generator(stream).gumbel(loc=0.0, scale=scale))


def l2_norm(v: npt.ArrayLike) -> float:
    """euclidean norm of a flat vector."""
    return float(np.linalg.norm(np.asarray(v, dtype=np.float64)))


def as_param_vector(values: npt.ArrayLike) -> ParamVector:
    """converts to a flat float64 vector, rejecting non-finite entries."""
    vector = np.asarray(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(vector)):
        raise ParameterError("parameter vector has non-finite entries")
    return vector
