"""results CSV (one metric per row) and per-cell summary JSON."""

import csv
import json
import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Any, Optional

import numpy as np

from dpcfl.core.models import RunResult
from dpcfl.errors import ParameterError
from dpcfl.exporters.base import Exporter, prepare_destination

logger = logging.getLogger(__name__)

RESULT_COLUMNS: tuple[str, ...] = ("seed", "algorithm", "epsilon", "round", "metric", "value")
RESULTS_NAME = "results.csv"
SUMMARY_NAME = "summary.json"

ROUND_METRICS: tuple[str, ...] = (
    "mean_accuracy",
    "minority_accuracy",
    "clustering_correct",
    "privacy_spent",
)
FIRST_ROUND_METRICS: tuple[str, ...] = ("mss", "mpo", "switch_round", "num_clusters")


@dataclass(frozen=True)
class ResultRow:
    """one metric value of one round of one run."""

    seed: int
    algorithm: str
    epsilon: float
    round: int
    metric: str
    value: float


class ResultsTable:
    """append-only table of result rows."""

    def __init__(self) -> None:
        self._rows: list[ResultRow] = []

    def append(self, row: ResultRow) -> None:
        """adds one row at the end."""
        self._rows.append(row)

    def extend(self, rows: Iterable[ResultRow]) -> None:
        """adds rows at the end, in order."""
        self._rows.extend(rows)

    @property
    def rows(self) -> tuple[ResultRow, ...]:
        """all rows in insertion order."""
        return tuple(self._rows)

    def __len__(self) -> int:
        return len(self._rows)

    def write(self, path: Path) -> None:
        """writes the header and every row as UTF-8 CSV."""
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(RESULT_COLUMNS)
            for row in self._rows:
                seed, algorithm, epsilon, round_, metric, value = astuple(row)
                writer.writerow(
                    [seed, algorithm, repr(float(epsilon)), round_, metric, repr(float(value))]
                )


def _cell(value: Any) -> Any:
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, float):
        return repr(value)
    return value


def write_dataclass_rows(path: Path, rows: Sequence[Any]) -> None:
    """
    writes dataclass rows as UTF-8 CSV headed by their field names.

    Floats keep full precision and booleans become 0/1.

    Raises:
        ParameterError: if there are no rows to take the header from
    """
    if not rows:
        raise ParameterError(f"no rows to write to {path}")
    columns = [f.name for f in fields(rows[0])]
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(getattr(row, name)) for name in columns])
    logger.info("wrote %d row(s) to %s", len(rows), path)


def rows_for_run(result: RunResult) -> list[ResultRow]:
    """
    flattens a run into result rows.

    Every round contributes the ROUND_METRICS; a run with a first-round
    clustering summary adds its FIRST_ROUND_METRICS at round 1.
    """
    rows: list[ResultRow] = []

    def add(round_: int, metric: str, value: float) -> None:
        rows.append(
            ResultRow(result.seed, result.algorithm, result.epsilon, round_, metric, value)
        )

    for record in result.records:
        add(record.round, "mean_accuracy", record.mean_accuracy)
        add(record.round, "minority_accuracy", record.minority_accuracy)
        add(record.round, "clustering_correct", float(record.clustering_correct))
        add(record.round, "privacy_spent", record.privacy_spent)
        if record.round == 1 and result.first_round is not None:
            first = result.first_round
            add(1, "mss", first.mss)
            add(1, "mpo", first.mpo)
            add(1, "switch_round", float(first.switch_round))
            add(1, "num_clusters", float(first.num_clusters))
    return rows


def _finite_or_none(value: float) -> Optional[float]:
    return value if math.isfinite(value) else None


def summarize(results: Sequence[RunResult]) -> list[dict[str, Any]]:
    """
    aggregates runs into one entry per (algorithm, epsilon) cell.

    Args:
        results: runs in output order

    Returns:
        cells in first-seen order with seeds, final accuracies averaged over
        seeds, clustering-success count and per-seed first-round MSS
    """
    cells: dict[tuple[str, float], list[RunResult]] = {}
    for result in results:
        cells.setdefault((result.algorithm, result.epsilon), []).append(result)

    summary = []
    for (algorithm, epsilon), runs in cells.items():
        summary.append(
            {
                "algorithm": algorithm,
                "epsilon": epsilon,
                "seeds": [r.seed for r in runs],
                "final_mean_accuracy": float(np.mean([r.final.mean_accuracy for r in runs])),
                "final_minority_accuracy": float(
                    np.mean([r.final.minority_accuracy for r in runs])
                ),
                "clustering_success": sum(r.final.clustering_correct for r in runs),
                "max_privacy_spent": max(max(r.final_privacy, default=0.0) for r in runs),
                "first_round_mss": [
                    _finite_or_none(r.first_round.mss) if r.first_round else None
                    for r in runs
                ],
            }
        )
    return summary


class ResultsExporter(Exporter[Sequence[RunResult]]):  # pylint: disable=too-few-public-methods
    """writes results.csv and summary.json for a list of runs."""

    def export(
        self, payload: Sequence[RunResult], destination: Path, overwrite: bool = True
    ) -> list[Path]:
        """
        Export runs in the given order.

        Args:
            payload: finished runs
            destination: output directory
            overwrite: if False, refuse to replace existing files

        Returns:
            paths of the results CSV and the summary JSON
        """
        csv_path = destination / RESULTS_NAME
        summary_path = destination / SUMMARY_NAME
        prepare_destination(destination, [csv_path, summary_path], overwrite)

        table = ResultsTable()
        for result in payload:
            table.extend(rows_for_run(result))
        table.write(csv_path)

        with open(summary_path, "w", encoding="utf-8") as f:
            json.dump(summarize(payload), f, indent=2)
            f.write("\n")

        logger.info("wrote %d result row(s) to %s", len(table), csv_path)
        return [csv_path, summary_path]
