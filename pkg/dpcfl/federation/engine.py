"""shared simulation machinery: clients, calibrated noise, local training and round metrics."""

import logging
import math
from collections.abc import Sequence
from typing import Optional

import numpy as np

from dpcfl.clustering.confidence import adjusted_rand
from dpcfl.core.config import ExperimentConfig
from dpcfl.core.mathcore import SERVER_ID, ParamVector, StreamTag, derive_stream
from dpcfl.core.models import (
    ClientState,
    ClientUpdate,
    ClusterModels,
    FederatedDataset,
    RoundRecord,
    RunResult,
)
from dpcfl.federation.server import nonprivate_select_cluster, private_select_cluster
from dpcfl.privacy.accountant import (
    TrainingPrivacyPlan,
    calibrate_noise_scale,
    privacy_spent,
)
from dpcfl.training.dpsgd import TrainingStreams, dpsgd_local
from dpcfl.training.predictors import Predictor, make_predictor

logger = logging.getLogger(__name__)


class Federation:
    """
    one simulated federation: n clients, a predictor and per-client privacy plans.

    All clients participate in every round. Clients talk to the server only through
    ClientUpdate messages produced by local_update.
    """

    def __init__(
        self,
        config: ExperimentConfig,
        dataset: FederatedDataset,
        seed: int,
        *,
        full_first_round: bool,
        n_select_rounds: int,
    ) -> None:
        """
        builds client states and calibrates every client's noise scale.

        Args:
            config: experiment configuration
            dataset: federated task
            seed: master seed of the run
            full_first_round: if True, round 1 uses config's b1 policy, else b_rest
            n_select_rounds: private selection rounds to account for

        Raises:
            CalibrationError: if any client's budget cannot be met
        """
        self.config = config
        self.dataset = dataset
        self.seed = seed
        self.model: Predictor = make_predictor(
            config.predictor, dataset.d, dataset.C, config.hidden
        )
        self.theta_init = self.model.init_params(
            derive_stream(seed, SERVER_ID, 0, StreamTag.MODEL_INIT).generator()
        )

        self.plans: list[TrainingPrivacyPlan] = []
        self.clients: list[ClientState] = []
        for data in dataset.clients:
            N = len(data.train)
            b_rest = config.batch_size_rest(N)
            b1 = config.batch_size_first(N) if full_first_round else b_rest
            plan = TrainingPrivacyPlan(
                epsilon_total=config.epsilon,
                N=N,
                b1=b1,
                b_rest=b_rest,
                delta=config.delta,
                K=config.epochs,
                E=config.rounds,
                n_select_rounds=n_select_rounds,
                epsilon_select=config.select_fraction * config.epsilon,
            )
            z = calibrate_noise_scale(plan)
            self.plans.append(plan.with_noise_scale(z))
            self.clients.append(ClientState(data=data, b1=b1, b_rest=b_rest, z=z))

        self._plan_of = {
            c.client_id: plan for c, plan in zip(self.clients, self.plans)
        }
        self.selections_done = 0
        logger.debug(
            "federation of %d clients, p=%d, z in [%.4f, %.4f]",
            self.n,
            self.model.param_dim(),
            min(c.z for c in self.clients),
            max(c.z for c in self.clients),
        )

    @property
    def n(self) -> int:
        """number of clients."""
        return len(self.clients)

    @property
    def noise_scales(self) -> tuple[float, ...]:
        """calibrated z of every client."""
        return tuple(c.z for c in self.clients)

    def local_update(
        self,
        client: ClientState,
        start: ParamVector,
        round: int,  # pylint: disable=redefined-builtin
        prox_center: Optional[ParamVector] = None,
        prox_weight: float = 0.0,
    ) -> ClientUpdate:
        """runs one round of DPSGD on a client and wraps the result as its message."""
        b = client.b1 if round == 1 else client.b_rest
        report = dpsgd_local(
            self.model,
            start,
            client.data.train,
            b=b,
            K=self.config.epochs,
            eta=self.config.lr,
            c=self.config.clip,
            z=client.z,
            streams=TrainingStreams.for_round(self.seed, client.client_id, round),
            prox_center=prox_center,
            prox_weight=prox_weight,
        )
        return ClientUpdate(client.client_id, round, report.update, client.assignment)

    def train_round(
        self,
        starts: Sequence[ParamVector],
        round: int,  # pylint: disable=redefined-builtin
    ) -> list[ClientUpdate]:
        """one local training call per client, client i starting from starts[i]."""
        return [
            self.local_update(client, start, round)
            for client, start in zip(self.clients, starts)
        ]

    def select_cluster(
        self,
        client: ClientState,
        models: ClusterModels,
        round: int,  # pylint: disable=redefined-builtin
    ) -> int:
        """
        client-side choice of a cluster model on local train data.

        Uses the accuracy-scored exponential mechanism, or plain argmin of train
        loss when nonprivate_selection is set. A single candidate is returned
        without touching the data.
        """
        if models.M == 1:
            return 0
        train = client.data.train
        if self.config.nonprivate_selection:
            return nonprivate_select_cluster(
                [self.model.loss(theta, train) for theta in models.params]
            )
        plan = self._plan_of[client.client_id]
        assert plan.epsilon_select is not None
        return private_select_cluster(
            [self.model.accuracy(theta, train) for theta in models.params],
            client.N,
            plan.epsilon_select,
            derive_stream(self.seed, client.client_id, round, StreamTag.GUMBEL),
        )

    def count_selection(self, M: int) -> None:
        """notes that one private selection round took place."""
        if M > 1 and not self.config.nonprivate_selection:
            self.selections_done += 1

    def spent(self, rounds_done: int) -> tuple[float, ...]:
        """cumulative epsilon of every client after rounds_done rounds."""
        cache: dict[TrainingPrivacyPlan, float] = {}
        spent: list[float] = []
        for plan in self.plans:
            if plan not in cache:
                assert plan.z is not None
                cache[plan] = privacy_spent(
                    plan, plan.z, rounds_done, self.selections_done
                )
            spent.append(cache[plan])
        return tuple(spent)

    def record(
        self,
        round: int,  # pylint: disable=redefined-builtin
        assignments: Sequence[int],
        client_models: Sequence[ParamVector],
        clustered: bool = True,
    ) -> RoundRecord:
        """
        evaluates every client on its test set and summarizes the round.

        Args:
            round: round just completed
            assignments: model index each client uses
            client_models: parameters each client uses
            clustered: if False the run has no cluster structure and never counts
                as correctly clustered

        Returns:
            round metrics
        """
        accuracy = tuple(
            self.model.accuracy(theta, client.data.test)
            for client, theta in zip(self.clients, client_models)
        )
        truth = np.asarray(self.dataset.true_clusters)
        per_cluster = {
            m: float(np.mean(np.asarray(accuracy)[truth == m]))
            for m in range(self.dataset.M)
        }
        correct = clustered and math.isclose(
            adjusted_rand(assignments, truth), 1.0, abs_tol=1e-12
        )
        return RoundRecord(
            round=round,
            assignments=tuple(int(a) for a in assignments),
            client_accuracy=accuracy,
            cluster_accuracy=per_cluster,
            mean_accuracy=float(np.mean(accuracy)),
            minority_accuracy=per_cluster[self.dataset.minority_cluster],
            clustering_correct=correct,
            privacy_spent=max(self.spent(round)),
        )

    def new_result(self, algorithm: str) -> RunResult:
        """empty result for this federation's run."""
        return RunResult(
            algorithm=algorithm,
            seed=self.seed,
            epsilon=self.config.epsilon,
            noise_scales=self.noise_scales,
        )

    def finish(self, result: RunResult) -> RunResult:
        """stores the final per-client privacy spend on a result."""
        result.final_privacy = self.spent(self.config.rounds)
        logger.info(
            "%s seed=%d eps=%g: final mean accuracy %.4f",
            result.algorithm,
            self.seed,
            self.config.epsilon,
            result.final.mean_accuracy,
        )
        return result
