"""named Monte-Carlo validation suites comparing observed behaviour with closed forms."""

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, replace
from typing import Any, Optional

import numpy as np
import numpy.typing as npt

from dpcfl.clustering.confidence import theoretical_overlap
from dpcfl.core.config import ExperimentConfig
from dpcfl.core.mathcore import SERVER_ID, StreamTag, derive_stream
from dpcfl.core.models import FederatedDataset
from dpcfl.data.loader import load_dataset
from dpcfl.errors import ValidationFailure
from dpcfl.federation.algorithms import (
    first_round_clustering,
    first_round_stats,
    planned_selection_rounds,
)
from dpcfl.federation.engine import Federation
from dpcfl.federation.server import private_select_cluster
from dpcfl.privacy.accountant import (
    TrainingPrivacyPlan,
    account_training,
    calibrate_noise_scale,
    rdp_gaussian,
    rdp_subsampled_gaussian,
    selection_rounds,
)
from dpcfl.registry import Registry, registers
from dpcfl.training.dpsgd import TrainingStreams, dpsgd_local, predicted_update_variance
from dpcfl.training.predictors import make_predictor

logger = logging.getLogger(__name__)

VARIANCE_REPS = 200
VARIANCE_N = 256
VARIANCE_CLIP = 1e-3
VARIANCE_Z = 1.0
VARIANCE_TOLERANCE = 0.15

OVERLAP_SAMPLES = 100_000
OVERLAP_TOLERANCE = 0.01
# (distance, sigma, p) of the two compared components
OVERLAP_SETTINGS: tuple[tuple[float, float, int], ...] = (
    (1.0, 1.0, 4),
    (0.5, 1.0, 16),
    (2.0, 1.5, 8),
    (0.3, 0.5, 10),
    (1.0, 2.0, 20),
)

# b1 = N // k for each k
BATCH_FRACTIONS: tuple[int, ...] = (8, 4, 2, 1)
TREND_SEEDS = 40
TREND_INVERSIONS = 1

MSS_THRESHOLD = 2.0
MSS_SUCCESS_RATE = 0.95
MSS_EPSILONS: tuple[float, ...] = (0.25, 10.0)
# b1 = N // k for each k; N // 512 bottoms out at single-example batches
MSS_BATCH_FRACTIONS: tuple[int, ...] = (1, 8, 64, 512)
MSS_SEEDS = 5
# two clusters of ten clients over a d=2, C=2 task keep p small enough that
# pure-noise fits score below the threshold
MSS_CLUSTER_SIZES: tuple[int, ...] = (10, 10)
MSS_DIM = 2
MSS_CLASSES = 2
MSS_SAMPLES = 500
MSS_SPAN_HIGH = 4.0

COUNT_SEEDS = 20
COUNT_SUCCESS_RATE = 0.8

SELECTION_DRAWS = 100_000
SELECTION_TOLERANCE = 0.01
SELECTION_SCORES: tuple[tuple[float, ...], ...] = (
    (1.0, 0.0),
    (0.5, 0.2, 0.0),
    (1.0, 1.0, 0.0, 0.5),
)


@dataclass(frozen=True)
class CheckResult:
    """one observed quantity against its expected value."""

    name: str
    observed: float
    expected: float
    delta: float
    tolerance: float
    passed: bool

    @classmethod
    def within(
        cls, name: str, observed: float, expected: float, tolerance: float
    ) -> "CheckResult":
        """passes when |observed - expected| <= tolerance."""
        delta = observed - expected
        return cls(name, observed, expected, delta, tolerance, abs(delta) <= tolerance)

    @classmethod
    def at_most(
        cls, name: str, observed: float, bound: float, tolerance: float = 0.0
    ) -> "CheckResult":
        """passes when observed <= bound + tolerance."""
        delta = observed - bound
        return cls(name, observed, bound, delta, tolerance, delta <= tolerance)

    @classmethod
    def at_least(
        cls, name: str, observed: float, bound: float, tolerance: float = 0.0
    ) -> "CheckResult":
        """passes when observed >= bound - tolerance."""
        delta = observed - bound
        return cls(name, observed, bound, delta, tolerance, -delta <= tolerance)

    def as_row(self) -> list[str]:
        """formatted cells for a report table."""
        return [
            self.name,
            f"{self.observed:.6g}",
            f"{self.expected:.6g}",
            f"{self.delta:.3g}",
            f"{self.tolerance:.3g}",
            "[green]pass[/green]" if self.passed else "[red]FAIL[/red]",
        ]

    def as_dict(self) -> dict[str, Any]:
        """JSON-ready form."""
        data = asdict(self)
        for key in ("observed", "expected", "delta", "tolerance"):
            if not math.isfinite(data[key]):
                data[key] = None
        return data


Suite = Callable[[ExperimentConfig], list[CheckResult]]

SUITES: Registry[Suite] = Registry("validation suite")


def suite(name: str) -> Callable[[Suite], Suite]:
    """registers a validation suite under name."""
    return registers(SUITES, name)


def run_suite(name: str, config: ExperimentConfig) -> list[CheckResult]:
    """
    runs a registered suite.

    Raises:
        ParameterError: if no suite has that name
    """
    checks = SUITES.get(name)(config)
    logger.info(
        "suite %s: %d/%d checks passed", name, sum(c.passed for c in checks), len(checks)
    )
    return checks


def require_passed(checks: Sequence[CheckResult]) -> None:
    """raises ValidationFailure naming every failed check."""
    failed = [c for c in checks if not c.passed]
    if failed:
        raise ValidationFailure(
            "; ".join(
                f"{c.name}: observed {c.observed:.6g}, expected {c.expected:.6g} "
                f"(tolerance {c.tolerance:.3g})"
                for c in failed
            )
        )


def count_inversions(values: Sequence[float], increasing: bool) -> int:
    """adjacent pairs that break the expected monotone order."""
    pairs = zip(values, values[1:])
    if increasing:
        return sum(b < a for a, b in pairs)
    return sum(b > a for a, b in pairs)


def _batch_grid(N: int) -> list[int]:
    return [max(1, N // k) for k in BATCH_FRACTIONS]


def _first_client_size(dataset: FederatedDataset) -> int:
    return len(dataset.clients[0].train)


@suite("variance")
def variance_suite(config: ExperimentConfig) -> list[CheckResult]:
    """empirical variance of one round's update against the noise-only prediction."""
    dataset = load_dataset(config.dataset)
    model = make_predictor(config.predictor, dataset.d, dataset.C, config.hidden)
    train = dataset.clients[0].train
    data = train.subset(np.arange(min(VARIANCE_N, len(train))))
    N = len(data)
    seed = config.seeds[0]
    start = model.init_params(
        derive_stream(seed, SERVER_ID, 0, StreamTag.MODEL_INIT).generator()
    )

    checks = []
    observed_by_b = []
    for b in _batch_grid(N):
        updates = np.stack(
            [
                dpsgd_local(
                    model,
                    start,
                    data,
                    b=b,
                    K=config.epochs,
                    eta=config.lr,
                    c=VARIANCE_CLIP,
                    z=VARIANCE_Z,
                    streams=TrainingStreams.for_round(seed, rep, 1),
                ).update
                for rep in range(VARIANCE_REPS)
            ]
        )
        observed = float(np.sum(np.var(updates, axis=0, ddof=1)))
        predicted = predicted_update_variance(
            config.epochs, N, config.lr, model.param_dim(), VARIANCE_CLIP, VARIANCE_Z, b
        )
        observed_by_b.append(observed)
        checks.append(
            CheckResult.within(
                f"relative update variance b={b}",
                observed / predicted,
                1.0,
                VARIANCE_TOLERANCE,
            )
        )
    checks.append(
        CheckResult.at_most(
            "variance inversions over b", count_inversions(observed_by_b, False), 0
        )
    )
    return checks


@suite("overlap")
def overlap_suite(config: ExperimentConfig) -> list[CheckResult]:
    """closed-form overlap of two spherical Gaussians against half-space sampling."""
    rng = derive_stream(config.seeds[0], SERVER_ID, 0, StreamTag.DATA_GEN).generator()
    checks = []
    for distance, sigma, p in OVERLAP_SETTINGS:
        direction = rng.normal(size=p)
        direction /= np.linalg.norm(direction)
        samples = rng.normal(0.0, sigma / math.sqrt(p), size=(OVERLAP_SAMPLES, p))
        beyond = float(np.mean(samples @ direction > distance / 2.0))
        checks.append(
            CheckResult.within(
                f"overlap delta={distance:g} sigma={sigma:g} p={p}",
                2.0 * beyond,
                theoretical_overlap(distance, sigma, p),
                OVERLAP_TOLERANCE,
            )
        )
    return checks


def _within_cluster_variance(
    points: npt.NDArray[np.float64], truth: Sequence[int]
) -> float:
    labels = np.asarray(truth)
    spread = [
        float(np.sum(np.var(points[labels == m], axis=0)))
        for m in np.unique(labels)
        if np.sum(labels == m) > 1
    ]
    return float(np.mean(spread))


def _centroid_distance(
    points: npt.NDArray[np.float64], truth: Sequence[int]
) -> float:
    """mean distance between the update centroids of the true clusters."""
    labels = np.asarray(truth)
    centroids = [points[labels == m].mean(axis=0) for m in np.unique(labels)]
    distances = [
        float(np.linalg.norm(a - b))
        for i, a in enumerate(centroids)
        for b in centroids[i + 1 :]
    ]
    return float(np.mean(distances))


@suite("em-trend")
def em_trend_suite(config: ExperimentConfig) -> list[CheckResult]:
    """
    first-round statistics as the first-round batch grows.

    Update variance, EM iterations, the distance between the true clusters'
    update centroids and their closed-form overlap should fall with b1 while
    MSS rises. The overlap takes the first client's noise-only update variance
    and the measured centroid distance.
    """
    dataset = load_dataset(config.dataset)
    base = replace(config, num_clusters=dataset.M)
    truth = dataset.true_clusters
    variances, mss, iterations, distances, overlaps = [], [], [], [], []
    for b1 in _batch_grid(_first_client_size(dataset)):
        trial = replace(base, b1=b1)
        stats = [first_round_stats(trial, dataset, seed) for seed in range(TREND_SEEDS)]
        gaps = [_centroid_distance(s.points, truth) for s in stats]
        variances.append(
            float(np.mean([_within_cluster_variance(s.points, truth) for s in stats]))
        )
        iterations.append(float(np.mean([s.em_iterations for s in stats])))
        mss.append(float(np.mean([s.mss for s in stats])))
        distances.append(float(np.mean(gaps)))
        overlaps.append(
            float(
                np.mean(
                    [
                        theoretical_overlap(
                            gap,
                            math.sqrt(
                                predicted_update_variance(
                                    config.epochs, s.N, config.lr, s.p, config.clip, s.z, b1
                                )
                            ),
                            s.p,
                        )
                        for s, gap in zip(stats, gaps)
                    ]
                )
            )
        )
        logger.debug(
            "b1=%d: variance %.4g, MSS %.3f, EM iterations %.2f, "
            "centroid distance %.4g (x b1 = %.4g), overlap %.3g",
            b1,
            variances[-1],
            mss[-1],
            iterations[-1],
            distances[-1],
            distances[-1] * b1,
            overlaps[-1],
        )

    return [
        CheckResult.at_most(
            "update variance inversions", count_inversions(variances, False), 0, TREND_INVERSIONS
        ),
        CheckResult.at_most(
            "MSS inversions", count_inversions(mss, True), 0, TREND_INVERSIONS
        ),
        CheckResult.at_most(
            "EM iteration inversions",
            count_inversions(iterations, False),
            0,
            TREND_INVERSIONS,
        ),
        CheckResult.at_most(
            "centroid distance inversions",
            count_inversions(distances, False),
            0,
            TREND_INVERSIONS,
        ),
        CheckResult.at_most(
            "overlap inversions", count_inversions(overlaps, False), 0, TREND_INVERSIONS
        ),
    ]


@suite("accountant")
def accountant_suite(config: ExperimentConfig) -> list[CheckResult]:
    """calibration round trips over the budget grid and the q=1 identity."""
    dataset = load_dataset(config.dataset)
    N = _first_client_size(dataset)
    b_rest = config.batch_size_rest(N)
    n_select = 0 if config.nonprivate_selection else selection_rounds(config.rounds)

    checks = []
    for epsilon in config.epsilon_grid:
        for b1 in (N, b_rest):
            plan = TrainingPrivacyPlan(
                epsilon_total=epsilon,
                N=N,
                b1=b1,
                b_rest=b_rest,
                delta=config.delta,
                K=config.epochs,
                E=config.rounds,
                n_select_rounds=n_select,
                epsilon_select=config.select_fraction * epsilon,
            )
            spent = account_training(plan, calibrate_noise_scale(plan))
            checks.append(
                CheckResult(
                    name=f"round trip eps={epsilon:g} b1={b1}",
                    observed=spent,
                    expected=epsilon,
                    delta=spent - epsilon,
                    tolerance=0.01 * epsilon,
                    passed=0.99 * epsilon <= spent <= epsilon,
                )
            )

    gap = 0.0
    for z in (0.5, 1.0, 4.0):
        full = rdp_subsampled_gaussian(1.0, z)
        plain = rdp_gaussian(1.0, z)
        gap = max(gap, max(abs(a - b) for a, b in zip(full.epsilons, plain.epsilons)))
    checks.append(CheckResult.within("q=1 equals plain Gaussian", gap, 0.0, 1e-12))
    return checks


def mss_task(config: ExperimentConfig) -> ExperimentConfig:
    """two-cluster, low-dimensional version of config's task for the MSS sweep."""
    return replace(
        config,
        predictor="logreg",
        num_clusters=len(MSS_CLUSTER_SIZES),
        dataset=replace(
            config.dataset,
            cluster_sizes=MSS_CLUSTER_SIZES,
            d=MSS_DIM,
            C=MSS_CLASSES,
            samples_per_client=MSS_SAMPLES,
            path=None,
        ),
    )


@suite("mss-predicts-success")
def mss_success_suite(config: ExperimentConfig) -> list[CheckResult]:
    """
    first-round GMM clustering is exact whenever MSS clears the threshold.

    Sweeps budgets and first-round batch sizes on mss_task(config), wide enough
    that some runs fall below the threshold and some reach MSS_SPAN_HIGH.
    """
    base = mss_task(config)
    dataset = load_dataset(base.dataset)
    N = _first_client_size(dataset)
    scores: list[float] = []
    confident, successes = 0, 0
    for epsilon in MSS_EPSILONS:
        for k in MSS_BATCH_FRACTIONS:
            trial = replace(base, epsilon=epsilon, b1=max(1, N // k))
            for seed in range(MSS_SEEDS):
                stats = first_round_stats(trial, dataset, seed)
                scores.append(stats.mss)
                if stats.mss >= MSS_THRESHOLD:
                    confident += 1
                    successes += stats.clustering_correct
    logger.info(
        "MSS spanned [%.3f, %.3f]; %d of %d run(s) confident",
        min(scores),
        max(scores),
        confident,
        len(scores),
    )

    rate = successes / confident if confident else 0.0
    return [
        CheckResult.at_most("lowest MSS", min(scores), MSS_THRESHOLD),
        CheckResult.at_least("highest MSS", max(scores), MSS_SPAN_HIGH),
        CheckResult.at_least("confident runs", confident, 1),
        CheckResult.at_least("success rate with MSS >= 2", rate, MSS_SUCCESS_RATE),
    ]


@suite("cluster-count")
def cluster_count_suite(config: ExperimentConfig) -> list[CheckResult]:
    """argmax-MSS over the candidate counts recovers the true number of clusters."""
    dataset = load_dataset(config.dataset)
    trial = replace(config, num_clusters="auto")
    hits = 0
    for seed in range(COUNT_SEEDS):
        fed = Federation(
            trial,
            dataset,
            seed,
            full_first_round=True,
            n_select_rounds=planned_selection_rounds("rdpcfl", trial, dataset),
        )
        _, fit, _ = first_round_clustering(fed)
        hits += fit.M == dataset.M
    return [
        CheckResult.at_least(
            f"recovered M={dataset.M}", hits / COUNT_SEEDS, COUNT_SUCCESS_RATE
        )
    ]


def _softmax_law(
    scores: npt.NDArray[np.float64], N: int, epsilon: float
) -> npt.NDArray[np.float64]:
    logits = epsilon * scores / (2.0 / (N - 1))
    weights = np.exp(logits - logits.max())
    return np.asarray(weights / weights.sum(), dtype=np.float64)


@suite("selection")
def selection_suite(config: ExperimentConfig, draws: Optional[int] = None) -> list[CheckResult]:
    """Gumbel-max selection frequencies against the exponential-mechanism law."""
    n_draws = draws or SELECTION_DRAWS
    N, epsilon = 2, 2.0
    rng = derive_stream(config.seeds[0], SERVER_ID, 0, StreamTag.GUMBEL).generator()
    checks = []
    for scores in SELECTION_SCORES:
        counts = np.zeros(len(scores))
        for _ in range(n_draws):
            counts[private_select_cluster(scores, N, epsilon, rng)] += 1
        law = _softmax_law(np.asarray(scores), N, epsilon)
        gap = float(np.max(np.abs(counts / n_draws - law)))
        checks.append(
            CheckResult.within(f"frequencies for scores {scores}", gap, 0.0, SELECTION_TOLERANCE)
        )
    return checks
