"""round-driven federated protocols."""

from dpcfl.federation.algorithms import ALGORITHM_RUNNERS, run_algorithm

__all__ = ["ALGORITHM_RUNNERS", "run_algorithm"]
