"""data models shared across the simulator."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import numpy.typing as npt

from dpcfl.core.mathcore import ParamVector
from dpcfl.errors import ParameterError


@dataclass(frozen=True)
class Dataset:
    """labelled examples held by one client."""

    x: npt.NDArray[np.float64]  # (n, d)
    y: npt.NDArray[np.int64]  # (n,)

    def __post_init__(self) -> None:
        if self.x.ndim != 2 or self.y.ndim != 1 or len(self.x) != len(self.y):
            raise ParameterError(
                f"dataset needs x of shape (n, d) and y of shape (n,), got "
                f"{self.x.shape} and {self.y.shape}"
            )

    def __len__(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        """feature dimension."""
        return int(self.x.shape[1])

    def subset(self, indices: npt.NDArray[np.int64]) -> "Dataset":
        """returns the examples at indices."""
        return Dataset(self.x[indices], self.y[indices])


@dataclass(frozen=True)
class ClientData:
    """one client of a federated dataset with its true cluster s(i)."""

    client_id: int
    true_cluster: int
    train: Dataset
    test: Dataset


@dataclass(frozen=True)
class FederatedDataset:
    """clients grouped into clusters of identically distributed data."""

    clients: tuple[ClientData, ...]
    d: int
    C: int
    cluster_sizes: tuple[int, ...]
    shift: str
    seed: int

    @property
    def M(self) -> int:
        """number of true clusters."""
        return len(self.cluster_sizes)

    @property
    def true_clusters(self) -> tuple[int, ...]:
        """s(i) for every client in id order."""
        return tuple(c.true_cluster for c in self.clients)

    @property
    def minority_cluster(self) -> int:
        """smallest cluster, lowest index on ties."""
        return int(np.argmin(self.cluster_sizes))


@dataclass
class ClientState:
    """server-side bookkeeping for one participating client."""

    data: ClientData
    b1: int
    b_rest: int
    z: float
    assignment: Optional[int] = None
    frozen: bool = False

    @property
    def client_id(self) -> int:
        """client identifier."""
        return self.data.client_id

    @property
    def N(self) -> int:
        """local training set size."""
        return len(self.data.train)


@dataclass(frozen=True)
class ClientUpdate:
    """everything a client sends to the server in one round."""

    client_id: int
    round: int
    update: ParamVector
    selection: Optional[int] = None


@dataclass
class ClusterModels:
    """the server's M cluster models at the start of a round."""

    params: npt.NDArray[np.float64]  # (M, p)
    round: int

    @property
    def M(self) -> int:
        """number of cluster models."""
        return int(self.params.shape[0])

    @classmethod
    def uniform(cls, init: ParamVector, M: int, round: int) -> "ClusterModels":  # pylint: disable=redefined-builtin
        """M copies of one initialization."""
        return cls(np.tile(init, (M, 1)), round)


@dataclass(frozen=True)
class RoundRecord:
    """metrics after one communication round."""

    round: int
    assignments: tuple[int, ...]
    client_accuracy: tuple[float, ...]
    cluster_accuracy: dict[int, float]
    mean_accuracy: float
    minority_accuracy: float
    clustering_correct: bool
    privacy_spent: float


@dataclass(frozen=True)
class FirstRoundSummary:
    """outcome of R-DPCFL's first-round clustering."""

    num_clusters: int
    mss: float
    mpo: float
    switch_round: int
    em_iterations: int


@dataclass
class RunResult:
    """full trace of one algorithm run."""

    algorithm: str
    seed: int
    epsilon: float
    noise_scales: tuple[float, ...]
    records: list[RoundRecord] = field(default_factory=list)
    first_round: Optional[FirstRoundSummary] = None
    final_privacy: tuple[float, ...] = ()

    @property
    def final(self) -> RoundRecord:
        """record of the last round."""
        if not self.records:
            raise ParameterError("run has no rounds")
        return self.records[-1]
