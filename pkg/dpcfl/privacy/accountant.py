"""Renyi-DP accounting for DPSGD training plus private cluster selection.

Curves are evaluated on a fixed integer order grid, where the subsampled
Gaussian mechanism has the exact binomial-sum form

    eps(a) = log( sum_k C(a,k) (1-q)^(a-k) q^k exp(k(k-1) / (2 z^2)) ) / (a - 1)

evaluated in log space. Training batches are fixed-size shuffles but are
accounted at the Poisson rate q = b/N.
"""

import functools
import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import numpy.typing as npt
from scipy import special

from dpcfl.errors import CalibrationError, ParameterError

logger = logging.getLogger(__name__)

DEFAULT_ORDERS: tuple[float, ...] = tuple(float(a) for a in range(2, 129)) + (
    192.0,
    256.0,
)
DEFAULT_DELTA = 1e-4
DEFAULT_SELECT_FRACTION = 0.03

Z_SEARCH_LOW = 1e-2
Z_SEARCH_HIGH = 1e3
Z_SEARCH_STEPS = 60


@dataclass(frozen=True)
class RdpCurve:
    """epsilon(alpha) of a mechanism over a fixed order grid."""

    orders: tuple[float, ...]
    epsilons: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.orders) != len(self.epsilons):
            raise ParameterError("orders and epsilons differ in length")
        if any(a <= 1 for a in self.orders):
            raise ParameterError("RDP orders must be > 1")
        if any(math.isnan(e) or e < 0 for e in self.epsilons):
            raise ParameterError("RDP epsilons must be non-negative")

    def __add__(self, other: "RdpCurve") -> "RdpCurve":
        if self.orders != other.orders:
            raise ParameterError("cannot compose RDP curves over different order grids")
        return RdpCurve(
            self.orders, tuple(a + b for a, b in zip(self.epsilons, other.epsilons))
        )

    def scaled(self, count: float) -> "RdpCurve":
        """self-composes the mechanism count times."""
        if count < 0:
            raise ParameterError(f"composition count must be >= 0, got {count}")
        if count == 0:
            return zero_curve(self.orders)
        return RdpCurve(self.orders, tuple(e * count for e in self.epsilons))

    def at(self, order: float) -> float:
        """returns epsilon at one order of the grid."""
        return self.epsilons[self.orders.index(float(order))]


def zero_curve(orders: Sequence[float] = DEFAULT_ORDERS) -> RdpCurve:
    """curve of the mechanism that touches no data."""
    grid = tuple(float(a) for a in orders)
    return RdpCurve(grid, tuple(0.0 for _ in grid))


def _grid(orders: Iterable[float]) -> tuple[float, ...]:
    grid = tuple(float(a) for a in orders)
    if not grid:
        raise ParameterError("order grid is empty")
    return grid


def rdp_gaussian(
    sensitivity: float, sigma: float, orders: Iterable[float] = DEFAULT_ORDERS
) -> RdpCurve:
    """RDP of the Gaussian mechanism: alpha * sensitivity^2 / (2 sigma^2)."""
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    if sensitivity < 0:
        raise ParameterError(f"sensitivity must be >= 0, got {sensitivity}")
    grid = _grid(orders)
    ratio = sensitivity**2 / (2.0 * sigma**2)
    return RdpCurve(grid, tuple(a * ratio for a in grid))


@functools.lru_cache(maxsize=512)
def _log_binomials(order: int) -> npt.NDArray[np.float64]:
    k = np.arange(order + 1, dtype=np.float64)
    return np.asarray(
        special.gammaln(order + 1) - special.gammaln(k + 1) - special.gammaln(order - k + 1),
        dtype=np.float64,
    )


def _subsampled_gaussian_at(q: float, z: float, order: int) -> float:
    k = np.arange(order + 1, dtype=np.float64)
    log_terms = (
        _log_binomials(order)
        + k * math.log(q)
        + (order - k) * math.log1p(-q)
        + k * (k - 1) / (2.0 * z * z)
    )
    log_a = float(special.logsumexp(log_terms))
    # rounding can push log(A) a hair below zero for tiny q
    return max(0.0, log_a / (order - 1))


def rdp_subsampled_gaussian(
    q: float, z: float, orders: Iterable[float] = DEFAULT_ORDERS
) -> RdpCurve:
    """
    RDP of one Poisson-subsampled Gaussian gradient step.

    Args:
        q: sampling rate in [0, 1]
        z: noise scale (noise std over clipping threshold)
        orders: integer orders >= 2

    Returns:
        per-step RDP curve

    Raises:
        ParameterError: if q is outside [0, 1], z <= 0 or an order is not an integer >= 2
    """
    if not 0.0 <= q <= 1.0:
        raise ParameterError(f"sampling rate must be in [0, 1], got {q}")
    if z <= 0:
        raise ParameterError(f"noise scale must be positive, got {z}")
    grid = _grid(orders)
    if any(a < 2 or not a.is_integer() for a in grid):
        raise ParameterError("subsampled Gaussian accounting needs integer orders >= 2")

    if q == 0.0:
        return zero_curve(grid)
    if q == 1.0:
        return rdp_gaussian(1.0, z, grid)
    return _subsampled_curve(q, z, grid)


@functools.lru_cache(maxsize=1024)
def _subsampled_curve(q: float, z: float, grid: tuple[float, ...]) -> RdpCurve:
    return RdpCurve(grid, tuple(_subsampled_gaussian_at(q, z, int(a)) for a in grid))


def rdp_exponential_mechanism(
    epsilon_select: float, orders: Iterable[float] = DEFAULT_ORDERS
) -> RdpCurve:
    """exponential mechanism as (epsilon^2/8)-zCDP, i.e. alpha * epsilon^2 / 8."""
    if epsilon_select <= 0:
        raise ParameterError(f"selection epsilon must be positive, got {epsilon_select}")
    grid = _grid(orders)
    rho = epsilon_select**2 / 8.0
    return RdpCurve(grid, tuple(a * rho for a in grid))


def rdp_compose(
    curves: Iterable[RdpCurve], orders: Sequence[float] = DEFAULT_ORDERS
) -> RdpCurve:
    """
    composes mechanisms by summing their curves pointwise.

    Args:
        curves: curves over one shared order grid
        orders: grid of the result when curves is empty

    Returns:
        composed curve
    """
    curve_list = list(curves)
    if not curve_list:
        return zero_curve(orders)
    return functools.reduce(lambda a, b: a + b, curve_list)


def rdp_to_dp_with_order(curve: RdpCurve, delta: float) -> tuple[float, float]:
    """converts to (epsilon, delta)-DP, returning epsilon and the optimal order."""
    if not 0.0 < delta < 1.0:
        raise ParameterError(f"delta must be in (0, 1), got {delta}")
    orders = np.asarray(curve.orders, dtype=np.float64)
    eps = np.asarray(curve.epsilons, dtype=np.float64)
    finite = np.isfinite(eps)
    if not np.any(finite):
        raise ParameterError("cannot convert an empty RDP curve")
    orders, eps = orders[finite], eps[finite]

    converted = (
        eps
        + np.log(1.0 / (orders * delta)) / (orders - 1.0)
        + np.log1p(-1.0 / orders)
    )
    best = int(np.argmin(converted))
    return max(0.0, float(converted[best])), float(orders[best])


def rdp_to_dp(curve: RdpCurve, delta: float) -> float:
    """
    converts an RDP curve to the smallest epsilon at delta over its grid.

    Args:
        curve: RDP curve
        delta: target delta in (0, 1)

    Returns:
        epsilon such that the mechanism is (epsilon, delta)-DP
    """
    return rdp_to_dp_with_order(curve, delta)[0]


def selection_rounds(rounds: int) -> int:
    """number of private selection rounds: 10% of the rounds, at least one."""
    return max(1, rounds // 10)


@dataclass(frozen=True)
class TrainingPrivacyPlan:
    """privacy-relevant shape of one client's participation."""

    epsilon_total: float
    N: int
    b1: int
    b_rest: int
    delta: float = DEFAULT_DELTA
    K: int = 1
    E: int = 200
    n_select_rounds: int = 0
    epsilon_select: Optional[float] = None
    z: Optional[float] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.epsilon_total <= 0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon_total}")
        if not 0.0 < self.delta < 1.0:
            raise ParameterError(f"delta must be in (0, 1), got {self.delta}")
        if self.N < 1:
            raise ParameterError(f"dataset size must be >= 1, got {self.N}")
        if not 1 <= self.b1 <= self.N or not 1 <= self.b_rest <= self.N:
            raise ParameterError(
                f"batch sizes must lie in [1, {self.N}], got {self.b1} and {self.b_rest}"
            )
        if self.K < 1 or self.E < 1:
            raise ParameterError("epochs and rounds must be >= 1")
        if self.n_select_rounds < 0:
            raise ParameterError("selection rounds must be >= 0")
        if self.epsilon_select is None:
            object.__setattr__(
                self, "epsilon_select", DEFAULT_SELECT_FRACTION * self.epsilon_total
            )
        elif self.epsilon_select <= 0:
            raise ParameterError("selection epsilon must be positive")

    @property
    def steps_first(self) -> int:
        """gradient steps in round 1."""
        return self.K * math.ceil(self.N / self.b1)

    @property
    def steps_per_round(self) -> int:
        """gradient steps in each round after the first."""
        return self.K * math.ceil(self.N / self.b_rest)

    def with_noise_scale(self, z: float) -> "TrainingPrivacyPlan":
        """returns a copy carrying a calibrated noise scale."""
        return replace(self, z=z)


def composed_curve(
    plan: TrainingPrivacyPlan,
    z: float,
    rounds_done: Optional[int] = None,
    selections_done: Optional[int] = None,
) -> RdpCurve:
    """
    composes training steps and selection rounds of a plan.

    Args:
        plan: privacy plan
        z: noise scale
        rounds_done: training rounds to include (defaults to all E)
        selections_done: selection rounds to include (defaults to the plan's count)

    Returns:
        composed RDP curve
    """
    rounds = plan.E if rounds_done is None else min(rounds_done, plan.E)
    selections = plan.n_select_rounds if selections_done is None else selections_done

    curve = zero_curve()
    if rounds >= 1:
        curve = curve + rdp_subsampled_gaussian(plan.b1 / plan.N, z).scaled(
            plan.steps_first
        )
    if rounds >= 2:
        curve = curve + rdp_subsampled_gaussian(plan.b_rest / plan.N, z).scaled(
            (rounds - 1) * plan.steps_per_round
        )
    if selections > 0:
        assert plan.epsilon_select is not None
        curve = curve + rdp_exponential_mechanism(plan.epsilon_select).scaled(
            selections
        )
    return curve


def account_training(plan: TrainingPrivacyPlan, z: float) -> float:
    """epsilon at plan.delta of all training steps plus all selection rounds."""
    if z <= 0:
        raise ParameterError(f"noise scale must be positive, got {z}")
    return rdp_to_dp(composed_curve(plan, z), plan.delta)


def privacy_spent(
    plan: TrainingPrivacyPlan, z: float, rounds_done: int, selections_done: int
) -> float:
    """epsilon at plan.delta spent after a prefix of the run."""
    if rounds_done <= 0 and selections_done <= 0:
        return 0.0
    return rdp_to_dp(
        composed_curve(plan, z, rounds_done, selections_done), plan.delta
    )


@functools.lru_cache(maxsize=256)
def calibrate_noise_scale(plan: TrainingPrivacyPlan) -> float:
    """
    finds the smallest noise scale meeting the plan's budget by bisection.

    Args:
        plan: privacy plan (its z field is ignored)

    Returns:
        noise scale z with account_training(plan, z) <= epsilon_total

    Raises:
        CalibrationError: if even the largest searched noise scale exceeds the budget
    """
    target = plan.epsilon_total
    if account_training(plan, Z_SEARCH_HIGH) > target:
        raise CalibrationError(
            f"budget epsilon={target} cannot be met: selection overhead and "
            f"conversion slack alone exceed it"
        )
    if account_training(plan, Z_SEARCH_LOW) <= target:
        return Z_SEARCH_LOW

    lo, hi = Z_SEARCH_LOW, Z_SEARCH_HIGH
    for _ in range(Z_SEARCH_STEPS):
        mid = 0.5 * (lo + hi)
        if account_training(plan, mid) <= target:
            hi = mid
        else:
            lo = mid

    logger.debug(
        "calibrated z=%.6f for N=%d b1=%d b_rest=%d eps=%.3f",
        hi,
        plan.N,
        plan.b1,
        plan.b_rest,
        target,
    )
    return hi
