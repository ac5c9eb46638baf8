"""tests for experiment commands."""

import csv
import json
from dataclasses import replace
from pathlib import Path

import pytest

from dpcfl.core.config import ExperimentConfig, config_from_dict
from dpcfl.core.models import FederatedDataset, RunResult
from dpcfl.exporters.dataset import MANIFEST_NAME
from dpcfl.exporters.results import RESULTS_NAME, SUMMARY_NAME
from dpcfl.experiment import (
    CONFIG_NAME,
    EXIT_INFEASIBLE,
    EXIT_OK,
    EXIT_PARTIAL,
    EXIT_USAGE,
    EXIT_VALIDATION,
    MSS_SWEEP_NAME,
    TUNED_NAME,
    TUNING_NAME,
    Cell,
    TuningRow,
    best_settings,
    calibration_rows,
    cmd_calibrate,
    cmd_generate_data,
    cmd_mss_sweep,
    cmd_run,
    cmd_sweep,
    cmd_tune,
    cmd_validate,
    mss_sweep_configs,
    run_cell,
    run_cells_for,
    tune_cell,
    tuning_cells,
)
from dpcfl.validation import CheckResult


def _read_rows(path: Path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def test_cells_are_ordered_by_epsilon_algorithm_seed() -> None:
    """epsilon is the outer loop and seed the inner one."""
    config = ExperimentConfig(algorithms=("ifca", "local"), seeds=(0, 1))

    cells = run_cells_for(config, (3.0, 5.0))

    assert [(c.epsilon, c.algorithm, c.seed) for c in cells[:4]] == [
        (3.0, "ifca", 0),
        (3.0, "ifca", 1),
        (3.0, "local", 0),
        (3.0, "local", 1),
    ]
    assert len(cells) == 8
    assert cells[-1].label == "local eps=5 seed=1"


def test_run_cell_uses_cell_budget(tiny_config: ExperimentConfig) -> None:
    """the cell's epsilon replaces the config's."""
    result = run_cell(tiny_config, Cell(8.0, "local", 2))

    assert isinstance(result, RunResult)
    assert (result.algorithm, result.epsilon, result.seed) == ("local", 8.0, 2)


def test_cmd_run_writes_results(tiny_config: ExperimentConfig, tmp_path: Path) -> None:
    """run writes config, results and summary."""
    config = replace(tiny_config, algorithms=("rdpcfl", "oracle"), seeds=(0, 1))

    assert cmd_run(config, tmp_path, quiet=True) == EXIT_OK

    rows = _read_rows(tmp_path / RESULTS_NAME)
    # rdpcfl: 4 rounds x 4 metrics + 4 first-round metrics; oracle: 4 x 4
    assert len(rows) == 2 * 20 + 2 * 16
    assert [rows[0]["algorithm"], rows[0]["seed"]] == ["rdpcfl", "0"]
    assert [rows[-1]["algorithm"], rows[-1]["seed"]] == ["oracle", "1"]
    summary = json.loads((tmp_path / SUMMARY_NAME).read_text(encoding="utf-8"))
    assert [s["algorithm"] for s in summary] == ["rdpcfl", "oracle"]
    saved = json.loads((tmp_path / CONFIG_NAME).read_text(encoding="utf-8"))
    assert config_from_dict(saved) == config


def test_cmd_run_is_reproducible(tiny_config: ExperimentConfig, tmp_path: Path) -> None:
    """two runs with the same config write identical results."""
    config = replace(tiny_config, algorithms=("ifca",))

    cmd_run(config, tmp_path / "a", quiet=True)
    cmd_run(config, tmp_path / "b", quiet=True)

    assert (tmp_path / "a" / RESULTS_NAME).read_bytes() == (
        tmp_path / "b" / RESULTS_NAME
    ).read_bytes()


def test_cmd_sweep_covers_grid(tiny_config: ExperimentConfig, tmp_path: Path) -> None:
    """sweep runs every budget of the grid into one table."""
    config = replace(tiny_config, algorithms=("global",), epsilon_grid=(3.0, 6.0))

    assert cmd_sweep(config, tmp_path, quiet=True) == EXIT_OK

    epsilons = [row["epsilon"] for row in _read_rows(tmp_path / RESULTS_NAME)]
    assert epsilons == ["3.0"] * 16 + ["6.0"] * 16


@pytest.mark.slow
def test_parallel_sweep_matches_serial(tiny_config: ExperimentConfig, tmp_path: Path) -> None:
    """worker processes do not change results or their order."""
    config = replace(
        tiny_config, algorithms=("ifca", "local"), epsilon_grid=(3.0, 6.0), seeds=(0, 1)
    )

    cmd_sweep(config, tmp_path / "serial", quiet=True)
    cmd_sweep(replace(config, jobs=2), tmp_path / "parallel", quiet=True)

    assert (tmp_path / "serial" / RESULTS_NAME).read_bytes() == (
        tmp_path / "parallel" / RESULTS_NAME
    ).read_bytes()


def test_cmd_run_infeasible_budget(tiny_config: ExperimentConfig, tmp_path: Path) -> None:
    """every cell failing calibration gives exit code 3 and no results."""
    config = replace(tiny_config, epsilon=0.005)

    assert cmd_run(config, tmp_path, quiet=True) == EXIT_INFEASIBLE
    assert not (tmp_path / RESULTS_NAME).exists()


def test_cmd_run_partial_failure(
    tiny_config: ExperimentConfig, tmp_path: Path, monkeypatch: pytest.MonkeyPatch
) -> None:
    """a failing cell does not stop the others."""

    def flaky(config: ExperimentConfig, cell: Cell) -> RunResult:
        if cell.seed == 1:
            raise RuntimeError("boom")
        return run_cell(config, cell)

    monkeypatch.setattr("dpcfl.experiment.run_cell", flaky)
    config = replace(tiny_config, algorithms=("local",), seeds=(0, 1))

    assert cmd_run(config, tmp_path, quiet=True) == EXIT_PARTIAL
    seeds = {row["seed"] for row in _read_rows(tmp_path / RESULTS_NAME)}
    assert seeds == {"0"}


def test_cmd_generate_data(tiny_config: ExperimentConfig, tmp_path: Path) -> None:
    """generate-data writes the client files and manifest."""
    assert cmd_generate_data(tiny_config, tmp_path, quiet=True) == EXIT_OK

    manifest = json.loads((tmp_path / MANIFEST_NAME).read_text(encoding="utf-8"))
    assert len(manifest["clients"]) == 5
    assert manifest["samples_per_client"] == 50


def test_generated_data_drives_runs(tiny_config: ExperimentConfig, tmp_path: Path) -> None:
    """a run on loaded files matches a run on the generated dataset."""
    cmd_generate_data(tiny_config, tmp_path / "data", quiet=True)
    loaded = replace(
        tiny_config,
        algorithms=("oracle",),
        dataset=replace(tiny_config.dataset, path=str(tmp_path / "data")),
    )
    generated = replace(tiny_config, algorithms=("oracle",))

    cmd_run(loaded, tmp_path / "loaded", quiet=True)
    cmd_run(generated, tmp_path / "generated", quiet=True)

    assert (tmp_path / "loaded" / RESULTS_NAME).read_bytes() == (
        tmp_path / "generated" / RESULTS_NAME
    ).read_bytes()


def test_calibration_rows(tiny_config: ExperimentConfig, tiny_dataset: FederatedDataset) -> None:
    """one row per client and algorithm, each within budget."""
    config = replace(tiny_config, algorithms=("rdpcfl", "local"))

    rows = calibration_rows(config, tiny_dataset)

    assert len(rows) == 10
    rdpcfl = [r for r in rows if r.algorithm == "rdpcfl"]
    local = [r for r in rows if r.algorithm == "local"]
    assert all(r.b1 == r.N == 40 and r.selection_rounds == 1 for r in rdpcfl)
    assert all(r.b1 == 8 and r.selection_rounds == 0 for r in local)
    assert all(r.epsilon <= config.epsilon for r in rows)
    assert rdpcfl[0].z > local[0].z


def test_cmd_calibrate(tiny_config: ExperimentConfig, capsys: pytest.CaptureFixture[str]) -> None:
    """calibrate prints a table of noise scales."""
    assert cmd_calibrate(tiny_config) == EXIT_OK

    assert "Noise calibration" in capsys.readouterr().err


def test_cmd_calibrate_infeasible(tiny_config: ExperimentConfig) -> None:
    """an unreachable budget gives exit code 3."""
    assert cmd_calibrate(replace(tiny_config, epsilon=0.005), quiet=True) == EXIT_INFEASIBLE


def test_cmd_validate_reports_failure(
    tiny_config: ExperimentConfig, tmp_path: Path, monkeypatch: pytest.MonkeyPatch
) -> None:
    """a failed check gives exit code 4 and is written to the report."""
    checks = [
        CheckResult.within("close", 1.0, 1.0, 0.1),
        CheckResult.within("far", 2.0, 1.0, 0.1),
    ]
    monkeypatch.setattr("dpcfl.experiment.run_suite", lambda name, config: checks)

    assert cmd_validate("overlap", tiny_config, quiet=True, output=tmp_path) == EXIT_VALIDATION

    report = json.loads((tmp_path / "checks-overlap.json").read_text(encoding="utf-8"))
    assert [c["passed"] for c in report] == [True, False]


def test_cmd_validate_success(
    tiny_config: ExperimentConfig, monkeypatch: pytest.MonkeyPatch
) -> None:
    """all checks passing gives exit code 0."""
    monkeypatch.setattr(
        "dpcfl.experiment.run_suite",
        lambda name, config: [CheckResult.at_most("bound", 0.0, 1.0)],
    )

    assert cmd_validate("selection", tiny_config, quiet=True) == EXIT_OK


def test_cell_overrides_lr_and_clip(tiny_config: ExperimentConfig) -> None:
    """a tuning cell carries its own learning rate and threshold."""
    cell = Cell(4.0, "global", 1, lr=0.05, clip=2.0)

    config = cell.config_for(tiny_config)

    assert (config.epsilon, config.lr, config.clip) == (4.0, 0.05, 2.0)
    assert Cell(4.0, "global", 1).config_for(tiny_config).lr == tiny_config.lr
    assert cell.label == "global eps=4 seed=1 lr=0.05 clip=2"


def test_tuning_cells_cover_grid(tiny_config: ExperimentConfig) -> None:
    """algorithms x lr x clip x seeds, seeds innermost."""
    config = replace(
        tiny_config,
        algorithms=("global", "local"),
        lr_grid=(0.01, 0.1),
        clip_grid=(1.0, 2.0, 3.0),
        seeds=(0, 1),
    )

    cells = tuning_cells(config)

    assert len(cells) == 2 * 2 * 3 * 2
    assert [(c.algorithm, c.lr, c.clip, c.seed) for c in cells[:3]] == [
        ("global", 0.01, 1.0, 0),
        ("global", 0.01, 1.0, 1),
        ("global", 0.01, 2.0, 0),
    ]
    assert all(c.epsilon == config.epsilon for c in cells)


def test_best_settings_average_seeds_and_keep_first_on_ties() -> None:
    """the highest seed-mean accuracy wins; ties go to the earlier setting."""
    rows = [
        TuningRow("global", 0.01, 1.0, 0, 0.6),
        TuningRow("global", 0.01, 1.0, 1, 0.8),
        TuningRow("global", 0.1, 1.0, 0, 0.9),
        TuningRow("global", 0.1, 1.0, 1, 0.3),
        TuningRow("local", 0.01, 1.0, 0, 0.5),
        TuningRow("local", 0.1, 2.0, 0, 0.5),
    ]

    choices = {c.algorithm: c for c in best_settings(rows)}

    assert (choices["global"].lr, choices["global"].clip) == (0.01, 1.0)
    assert choices["global"].validation_accuracy == pytest.approx(0.7)
    assert choices["global"].seeds == 2
    assert (choices["local"].lr, choices["local"].clip) == (0.01, 1.0)


def test_tune_cell_scores_on_validation_rows(tiny_config: ExperimentConfig) -> None:
    """tuning evaluates on held-out train rows, never on the test split."""
    cell = Cell(tiny_config.epsilon, "local", 0, lr=0.1, clip=1.0)

    tuned = tune_cell(replace(tiny_config, validation_fraction=0.25), cell)
    tested = run_cell(tiny_config, cell)

    assert len(tuned.records) == tiny_config.rounds
    assert tuned.noise_scales != tested.noise_scales


def test_cmd_tune_writes_choices(tiny_config: ExperimentConfig, tmp_path: Path) -> None:
    """tune writes every cell and the best setting per algorithm."""
    config = replace(
        tiny_config, algorithms=("global",), lr_grid=(0.05, 0.1), clip_grid=(1.0,)
    )

    assert cmd_tune(config, tmp_path, quiet=True) == EXIT_OK

    rows = _read_rows(tmp_path / TUNING_NAME)
    assert [(r["lr"], r["clip"]) for r in rows] == [("0.05", "1.0"), ("0.1", "1.0")]
    tuned = json.loads((tmp_path / TUNED_NAME).read_text(encoding="utf-8"))
    assert len(tuned) == 1
    assert tuned[0]["algorithm"] == "global"
    assert tuned[0]["validation_accuracy"] == max(
        float(r["validation_accuracy"]) for r in rows
    )
    assert (tmp_path / CONFIG_NAME).exists()


def test_cmd_tune_infeasible(tiny_config: ExperimentConfig, tmp_path: Path) -> None:
    """no feasible cell gives exit code 3 and no files."""
    config = replace(
        tiny_config, epsilon=0.005, algorithms=("rdpcfl",), lr_grid=(0.1,), clip_grid=(1.0,)
    )

    assert cmd_tune(config, tmp_path, quiet=True) == EXIT_INFEASIBLE
    assert not (tmp_path / TUNING_NAME).exists()


def test_mss_sweep_configs_cover_grid(tiny_config: ExperimentConfig) -> None:
    """dataset sizes x batch sizes x budgets, budgets innermost."""
    config = replace(
        tiny_config,
        mss_samples_grid=(30, 50),
        mss_b_rest_grid=(4, 8),
        epsilon_grid=(3.0, 6.0),
    )

    trials = mss_sweep_configs(config)

    assert len(trials) == 8
    assert [
        (t.dataset.samples_per_client, t.b_rest, t.epsilon) for t in trials[:3]
    ] == [(30, 4, 3.0), (30, 4, 6.0), (30, 8, 3.0)]
    assert all(t.dataset.seed == config.dataset.seed for t in trials)


def test_cmd_mss_sweep_writes_rows(tiny_config: ExperimentConfig, tmp_path: Path) -> None:
    """one row per sweep point and seed with its first-round scores."""
    config = replace(
        tiny_config,
        mss_samples_grid=(30, 50),
        mss_b_rest_grid=(4, 8),
        epsilon_grid=(5.0,),
        seeds=(0, 1),
    )

    assert cmd_mss_sweep(config, tmp_path, quiet=True) == EXIT_OK

    rows = _read_rows(tmp_path / MSS_SWEEP_NAME)
    assert len(rows) == 2 * 2 * 2
    assert list(rows[0]) == [
        "samples_per_client",
        "b_rest",
        "epsilon",
        "seed",
        "num_clusters",
        "mss",
        "mpo",
        "clustering_correct",
        "z",
    ]
    assert {r["samples_per_client"] for r in rows} == {"30", "50"}
    assert all(r["clustering_correct"] in ("0", "1") for r in rows)
    assert all(0.0 <= float(r["mpo"]) <= 1.0 for r in rows)


def test_smaller_batches_lower_noise_in_mss_sweep(
    tiny_config: ExperimentConfig, tmp_path: Path
) -> None:
    """a smaller batch after round 1 needs less noise at the same budget."""
    config = replace(
        tiny_config, mss_samples_grid=(50,), mss_b_rest_grid=(4, 16), epsilon_grid=(5.0,)
    )

    cmd_mss_sweep(config, tmp_path, quiet=True)

    z = {r["b_rest"]: float(r["z"]) for r in _read_rows(tmp_path / MSS_SWEEP_NAME)}
    assert z["4"] < z["16"]


def test_cmd_mss_sweep_rejects_loaded_data(
    tiny_config: ExperimentConfig, tmp_path: Path
) -> None:
    """dataset sizes can only vary on generated data."""
    config = replace(tiny_config, dataset=replace(tiny_config.dataset, path=str(tmp_path)))

    assert cmd_mss_sweep(config, tmp_path / "out", quiet=True) == EXIT_USAGE
    assert not (tmp_path / "out" / MSS_SWEEP_NAME).exists()
