"""experiment commands: data generation, calibration, runs, sweeps and validation."""

import json
import logging
from collections.abc import Callable
from concurrent.futures import Future, ProcessPoolExecutor, as_completed
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np

from dpcfl.core.config import ExperimentConfig, config_to_dict
from dpcfl.core.models import FederatedDataset, RunResult
from dpcfl.data.loader import load_dataset
from dpcfl.data.synthetic import build_federated_dataset, hold_out_validation
from dpcfl.errors import CalibrationError, ParameterError, ValidationFailure
from dpcfl.exporters.dataset import write_federated_dataset
from dpcfl.exporters.results import ResultsExporter, write_dataclass_rows
from dpcfl.federation.algorithms import (
    first_round_stats,
    planned_selection_rounds,
    run_algorithm,
)
from dpcfl.privacy.accountant import (
    TrainingPrivacyPlan,
    account_training,
    calibrate_noise_scale,
)
from dpcfl.progress import ProgressHandler
from dpcfl.validation import require_passed, run_suite

logger = logging.getLogger(__name__)

CONFIG_NAME = "config.json"
TUNING_NAME = "tuning.csv"
TUNED_NAME = "tuned.json"
MSS_SWEEP_NAME = "mss.csv"

# exit codes
EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_VALIDATION = 4


@dataclass(frozen=True)
class Cell:
    """one run of one algorithm at one budget and seed, optionally at its own lr and clip."""

    epsilon: float
    algorithm: str
    seed: int
    lr: Optional[float] = None
    clip: Optional[float] = None

    @property
    def label(self) -> str:
        """short description for progress output."""
        label = f"{self.algorithm} eps={self.epsilon:g} seed={self.seed}"
        if self.lr is not None:
            label += f" lr={self.lr:g}"
        if self.clip is not None:
            label += f" clip={self.clip:g}"
        return label

    def config_for(self, config: ExperimentConfig) -> ExperimentConfig:
        """config with the cell's budget and any lr or clip it sets."""
        overrides: dict[str, Any] = {}
        if self.lr is not None:
            overrides["lr"] = self.lr
        if self.clip is not None:
            overrides["clip"] = self.clip
        return replace(config.with_epsilon(self.epsilon), **overrides)


def save_config(config: ExperimentConfig, output: Path) -> Path:
    """writes the effective config beside the results."""
    output.mkdir(parents=True, exist_ok=True)
    path = output / CONFIG_NAME
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config_to_dict(config), f, indent=2)
        f.write("\n")
    return path


def cmd_generate_data(
    config: ExperimentConfig,
    output: Path,
    quiet: bool = False,
    progress: bool = False,
) -> int:
    """
    generates the configured synthetic dataset and writes it to output.

    Args:
        config: experiment configuration (dataset section used)
        output: destination directory
        quiet: if True, suppress non-error output
        progress: if True, show a spinner

    Returns:
        exit code
    """
    spec = config.dataset
    with ProgressHandler(quiet=quiet, show_progress=progress) as handler:
        handler.start_phase("Generating dataset...")
        dataset = build_federated_dataset(
            seed=spec.seed,
            cluster_sizes=spec.cluster_sizes,
            shift=spec.shift,
            d=spec.d,
            C=spec.C,
            samples_per_client=spec.samples_per_client,
            margin=spec.margin,
            train_fraction=spec.train_fraction,
        )
        paths = write_federated_dataset(
            dataset,
            output,
            metadata={
                "margin": spec.margin,
                "train_fraction": spec.train_fraction,
                "samples_per_client": spec.samples_per_client,
            },
        )
        handler.log_info(f"Wrote {len(paths) - 1} client file(s) and manifest to {output}")
    return EXIT_OK


@dataclass(frozen=True)
class CalibrationRow:
    """calibrated noise of one client under one algorithm's plan."""

    algorithm: str
    client_id: int
    N: int
    b1: int
    b_rest: int
    selection_rounds: int
    epsilon_select: float
    z: float
    epsilon: float


def calibration_rows(
    config: ExperimentConfig, dataset: FederatedDataset
) -> list[CalibrationRow]:
    """
    calibrates z for every client under each requested algorithm's privacy plan.

    Raises:
        CalibrationError: if a budget cannot be met
    """
    rows = []
    for algorithm in config.run_algorithms:
        full_first = algorithm == "rdpcfl"
        n_select = planned_selection_rounds(algorithm, config, dataset)
        for client in dataset.clients:
            N = len(client.train)
            b_rest = config.batch_size_rest(N)
            plan = TrainingPrivacyPlan(
                epsilon_total=config.epsilon,
                N=N,
                b1=config.batch_size_first(N) if full_first else b_rest,
                b_rest=b_rest,
                delta=config.delta,
                K=config.epochs,
                E=config.rounds,
                n_select_rounds=n_select,
                epsilon_select=config.select_fraction * config.epsilon,
            )
            z = calibrate_noise_scale(plan)
            assert plan.epsilon_select is not None
            rows.append(
                CalibrationRow(
                    algorithm=algorithm,
                    client_id=client.client_id,
                    N=N,
                    b1=plan.b1,
                    b_rest=plan.b_rest,
                    selection_rounds=n_select,
                    epsilon_select=plan.epsilon_select,
                    z=z,
                    epsilon=account_training(plan, z),
                )
            )
    return rows


def cmd_calibrate(
    config: ExperimentConfig, quiet: bool = False, progress: bool = False
) -> int:
    """
    prints the calibrated noise scale of every client and the budget it spends.

    Returns:
        exit code (3 when the budget cannot be met)
    """
    with ProgressHandler(quiet=quiet, show_progress=progress) as handler:
        handler.start_phase("Calibrating noise...")
        try:
            rows = calibration_rows(config, load_dataset(config.dataset))
        except CalibrationError as e:
            handler.log_error(str(e))
            return EXIT_INFEASIBLE

        handler.print_table(
            f"Noise calibration at eps={config.epsilon:g}, delta={config.delta:g} "
            f"(selection fraction {config.select_fraction:g})",
            ["algorithm", "client", "N", "b1", "b_rest", "selections", "eps_select", "z", "eps"],
            [
                [
                    r.algorithm,
                    str(r.client_id),
                    str(r.N),
                    str(r.b1),
                    str(r.b_rest),
                    str(r.selection_rounds),
                    f"{r.epsilon_select:.4f}",
                    f"{r.z:.4f}",
                    f"{r.epsilon:.4f}",
                ]
                for r in rows
            ],
        )
    return EXIT_OK


def run_cell(config: ExperimentConfig, cell: Cell) -> RunResult:
    """runs the algorithm of a cell at its budget and seed."""
    return run_algorithm(
        cell.algorithm,
        cell.config_for(config),
        load_dataset(config.dataset),
        cell.seed,
    )


def tune_cell(config: ExperimentConfig, cell: Cell) -> RunResult:
    """runs a cell on the configured task with validation rows standing in for test."""
    dataset = hold_out_validation(
        load_dataset(config.dataset), config.validation_fraction
    )
    return run_algorithm(cell.algorithm, cell.config_for(config), dataset, cell.seed)


CellWorker = Callable[[ExperimentConfig, Cell], RunResult]


def _run_cells(
    config: ExperimentConfig,
    cells: list[Cell],
    handler: ProgressHandler,
    worker: Optional[CellWorker] = None,
) -> tuple[dict[Cell, RunResult], list[Exception]]:
    """runs cells (run_cell unless worker is given), in processes when config.jobs > 1."""
    work = worker or run_cell
    handler.set_total(len(cells))
    outcomes: dict[Cell, RunResult] = {}
    errors: list[Exception] = []

    def collect(cell: Cell, future: Optional["Future[RunResult]"]) -> None:
        try:
            outcomes[cell] = (
                future.result()
                if future is not None
                else work(config, cell)
            )
        except Exception as e:
            handler.log_error(f"Failed: {cell.label}: {e}")
            errors.append(e)
        handler.update(cell.label)

    if config.jobs <= 1:
        for cell in cells:
            collect(cell, None)
    else:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            futures = {pool.submit(work, config, cell): cell for cell in cells}
            for future in as_completed(futures):
                collect(futures[future], future)

    return outcomes, errors


def _exit_code(succeeded: int, errors: list[Exception]) -> int:
    if not errors:
        return EXIT_OK
    if not succeeded and all(isinstance(e, CalibrationError) for e in errors):
        return EXIT_INFEASIBLE
    return EXIT_PARTIAL


def _execute(
    config: ExperimentConfig,
    cells: list[Cell],
    output: Path,
    quiet: bool,
    progress: bool,
) -> int:
    with ProgressHandler(quiet=quiet, show_progress=progress) as handler:
        handler.log_info(f"Running {len(cells)} cell(s)")
        outcomes, errors = _run_cells(config, cells, handler)
        results = [outcomes[c] for c in cells if c in outcomes]

        if results:
            save_config(config, output)
            ResultsExporter().export(results, output)
        handler.finish(len(results), len(errors))
        if results:
            handler.log_info(f"Results written to {output}")

    return _exit_code(len(results), errors)


def run_cells_for(config: ExperimentConfig, epsilons: tuple[float, ...]) -> list[Cell]:
    """cross product of budgets, algorithms and seeds in output order."""
    return [
        Cell(epsilon, algorithm, seed)
        for epsilon in epsilons
        for algorithm in config.run_algorithms
        for seed in config.seeds
    ]


def cmd_run(
    config: ExperimentConfig,
    output: Path,
    quiet: bool = False,
    progress: bool = False,
) -> int:
    """
    runs every configured algorithm for every seed at config.epsilon.

    Writes config.json, results.csv and summary.json to output.

    Returns:
        exit code (0 success, 1 some runs failed, 3 budget infeasible)
    """
    return _execute(config, run_cells_for(config, (config.epsilon,)), output, quiet, progress)


def cmd_sweep(
    config: ExperimentConfig,
    output: Path,
    quiet: bool = False,
    progress: bool = False,
) -> int:
    """
    runs the epsilon grid x algorithms x seeds cross product into one results table.

    Returns:
        exit code (0 success, 1 some cells failed, 3 budget infeasible everywhere)
    """
    return _execute(
        config, run_cells_for(config, config.epsilon_grid), output, quiet, progress
    )


@dataclass(frozen=True)
class TuningRow:
    """final validation accuracy of one tuning cell."""

    algorithm: str
    lr: float
    clip: float
    seed: int
    validation_accuracy: float


@dataclass(frozen=True)
class TuningChoice:
    """best (lr, clip) of one algorithm by mean validation accuracy over seeds."""

    algorithm: str
    lr: float
    clip: float
    validation_accuracy: float
    seeds: int


def tuning_cells(config: ExperimentConfig) -> list[Cell]:
    """algorithms x lr grid x clip grid x seeds at config.epsilon, in output order."""
    return [
        Cell(config.epsilon, algorithm, seed, lr=lr, clip=clip)
        for algorithm in config.run_algorithms
        for lr in config.lr_grid
        for clip in config.clip_grid
        for seed in config.seeds
    ]


def tuning_rows(cells: list[Cell], outcomes: dict[Cell, RunResult]) -> list[TuningRow]:
    """one row per finished tuning cell, in cell order."""
    rows = []
    for cell in cells:
        if cell not in outcomes:
            continue
        assert cell.lr is not None and cell.clip is not None
        rows.append(
            TuningRow(
                algorithm=cell.algorithm,
                lr=cell.lr,
                clip=cell.clip,
                seed=cell.seed,
                validation_accuracy=outcomes[cell].final.mean_accuracy,
            )
        )
    return rows


def best_settings(rows: list[TuningRow]) -> list[TuningChoice]:
    """
    picks each algorithm's (lr, clip) with the highest mean validation accuracy.

    Ties keep the setting seen first in grid order.
    """
    grouped: dict[tuple[str, float, float], list[float]] = {}
    for row in rows:
        grouped.setdefault((row.algorithm, row.lr, row.clip), []).append(
            row.validation_accuracy
        )

    best: dict[str, TuningChoice] = {}
    for (algorithm, lr, clip), accuracies in grouped.items():
        choice = TuningChoice(
            algorithm, lr, clip, float(np.mean(accuracies)), len(accuracies)
        )
        current = best.get(algorithm)
        if current is None or choice.validation_accuracy > current.validation_accuracy:
            best[algorithm] = choice
    return list(best.values())


def cmd_tune(
    config: ExperimentConfig,
    output: Path,
    quiet: bool = False,
    progress: bool = False,
) -> int:
    """
    grid-searches lr and clip for every configured algorithm on validation data.

    Each client's train set loses its trailing validation_fraction to a
    validation set that replaces the test set. Writes config.json, tuning.csv
    (one row per cell) and tuned.json (the best setting per algorithm).

    Returns:
        exit code (0 success, 1 some cells failed, 3 budget infeasible)
    """
    cells = tuning_cells(config)
    with ProgressHandler(quiet=quiet, show_progress=progress) as handler:
        handler.log_info(
            f"Tuning over {len(config.lr_grid)} learning rate(s) x "
            f"{len(config.clip_grid)} clipping threshold(s): {len(cells)} cell(s)"
        )
        outcomes, errors = _run_cells(config, cells, handler, worker=tune_cell)
        rows = tuning_rows(cells, outcomes)

        if rows:
            choices = best_settings(rows)
            save_config(config, output)
            write_dataclass_rows(output / TUNING_NAME, rows)
            with open(output / TUNED_NAME, "w", encoding="utf-8") as f:
                json.dump(
                    [
                        {
                            "algorithm": c.algorithm,
                            "lr": c.lr,
                            "clip": c.clip,
                            "validation_accuracy": c.validation_accuracy,
                            "seeds": c.seeds,
                        }
                        for c in choices
                    ],
                    f,
                    indent=2,
                )
                f.write("\n")
            handler.print_table(
                f"Tuned settings at eps={config.epsilon:g} "
                f"(validation fraction {config.validation_fraction:g})",
                ["algorithm", "lr", "clip", "validation accuracy", "seeds"],
                [
                    [
                        c.algorithm,
                        f"{c.lr:g}",
                        f"{c.clip:g}",
                        f"{c.validation_accuracy:.4f}",
                        str(c.seeds),
                    ]
                    for c in choices
                ],
            )
        handler.finish(len(rows), len(errors))
        if rows:
            handler.log_info(f"Tuning results written to {output}")

    return _exit_code(len(rows), errors)


@dataclass(frozen=True)
class MssSweepRow:
    """first-round clustering at one dataset size, batch size, budget and seed."""

    samples_per_client: int
    b_rest: int
    epsilon: float
    seed: int
    num_clusters: int
    mss: float
    mpo: float
    clustering_correct: bool
    z: float


def mss_sweep_configs(config: ExperimentConfig) -> list[ExperimentConfig]:
    """samples grid x b_rest grid x epsilon grid, each as a config to run per seed."""
    return [
        replace(
            config,
            epsilon=epsilon,
            b_rest=b_rest,
            dataset=replace(config.dataset, samples_per_client=samples),
        )
        for samples in config.mss_samples_grid
        for b_rest in config.mss_b_rest_grid
        for epsilon in config.epsilon_grid
    ]


def mss_sweep_row(trial: ExperimentConfig, seed: int) -> MssSweepRow:
    """
    runs R-DPCFL's first round for one sweep point.

    Raises:
        CalibrationError: if the point's budget cannot be met
    """
    stats = first_round_stats(trial, load_dataset(trial.dataset), seed)
    return MssSweepRow(
        samples_per_client=trial.dataset.samples_per_client,
        b_rest=int(trial.b_rest),
        epsilon=trial.epsilon,
        seed=seed,
        num_clusters=stats.num_clusters,
        mss=stats.mss,
        mpo=stats.mpo,
        clustering_correct=stats.clustering_correct,
        z=stats.z,
    )


def cmd_mss_sweep(
    config: ExperimentConfig,
    output: Path,
    quiet: bool = False,
    progress: bool = False,
) -> int:
    """
    first-round MSS against epsilon for several local dataset sizes and batch sizes.

    Only the first round runs: the batch size after round 1 enters through the
    calibrated noise scale. Writes config.json and mss.csv.

    Returns:
        exit code (0 success, 1 some points failed, 2 loaded dataset,
        3 budget infeasible everywhere)
    """
    with ProgressHandler(quiet=quiet, show_progress=progress) as handler:
        if config.dataset.path is not None:
            handler.log_error(
                "mss-sweep generates data per local dataset size; drop --dataset"
            )
            return EXIT_USAGE

        trials = mss_sweep_configs(config)
        handler.set_total(len(trials) * len(config.seeds))
        rows: list[MssSweepRow] = []
        errors: list[Exception] = []
        for trial in trials:
            for seed in config.seeds:
                label = (
                    f"samples={trial.dataset.samples_per_client} b_rest={trial.b_rest} "
                    f"eps={trial.epsilon:g} seed={seed}"
                )
                try:
                    rows.append(mss_sweep_row(trial, seed))
                except (CalibrationError, ParameterError) as e:
                    handler.log_error(f"Failed: {label}: {e}")
                    errors.append(e)
                handler.update(label)

        if rows:
            save_config(config, output)
            write_dataclass_rows(output / MSS_SWEEP_NAME, rows)
            handler.print_table(
                "First-round MSS",
                ["samples", "b_rest", "eps", "mean MSS", "correct"],
                _mss_summary(rows),
            )
        handler.finish(len(rows), len(errors))
        if rows:
            handler.log_info(f"MSS sweep written to {output / MSS_SWEEP_NAME}")

    return _exit_code(len(rows), errors)


def _mss_summary(rows: list[MssSweepRow]) -> list[list[str]]:
    grouped: dict[tuple[int, int, float], list[MssSweepRow]] = {}
    for row in rows:
        key = (row.samples_per_client, row.b_rest, row.epsilon)
        grouped.setdefault(key, []).append(row)
    return [
        [
            str(samples),
            str(b_rest),
            f"{epsilon:g}",
            f"{np.mean([r.mss for r in points]):.3f}",
            f"{sum(r.clustering_correct for r in points)}/{len(points)}",
        ]
        for (samples, b_rest, epsilon), points in grouped.items()
    ]


def cmd_validate(
    name: str,
    config: ExperimentConfig,
    quiet: bool = False,
    progress: bool = False,
    output: Optional[Path] = None,
) -> int:
    """
    runs a named validation suite and prints every check against its tolerance.

    Args:
        name: suite name
        config: experiment configuration the suite draws its setup from
        quiet: if True, suppress non-error output
        progress: if True, show a spinner
        output: optional directory for a checks.json report

    Returns:
        exit code (4 when any check fails)

    Raises:
        ParameterError: if no suite has that name
    """
    with ProgressHandler(quiet=quiet, show_progress=progress) as handler:
        handler.start_phase(f"Validating {name}...")
        checks = run_suite(name, config)
        handler.print_table(
            f"Validation suite '{name}'",
            ["check", "observed", "expected", "delta", "tolerance", "result"],
            [c.as_row() for c in checks],
        )
        if output is not None:
            output.mkdir(parents=True, exist_ok=True)
            with open(output / f"checks-{name}.json", "w", encoding="utf-8") as f:
                json.dump([c.as_dict() for c in checks], f, indent=2)
                f.write("\n")

        try:
            require_passed(checks)
        except ValidationFailure as e:
            handler.log_error(str(e))
            return EXIT_VALIDATION
    return EXIT_OK
