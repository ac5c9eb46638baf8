"""experiment configuration: defaults, JSON parsing and validation."""

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional, Union

from dpcfl.errors import ConfigError

SCHEMA_VERSION = 1
OUTPUT_DIR_ENV = "DPCFL_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "dpcfl-out"

ALGORITHMS: tuple[str, ...] = ("rdpcfl", "ifca", "global", "local", "mrmtl", "oracle")
DEFAULT_EPSILON_GRID: tuple[float, ...] = (3.0, 4.0, 5.0, 10.0, 15.0)
DEFAULT_LR_GRID: tuple[float, ...] = (5e-4, 1e-3, 2e-3, 5e-3, 1e-2, 2e-2, 5e-2, 1e-1)
DEFAULT_CLIP_GRID: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0, 5.0)


@dataclass(frozen=True)
class DatasetSpec:
    """how to obtain the federated dataset: generated from a seed, or loaded from a manifest."""

    seed: int = 0
    cluster_sizes: tuple[int, ...] = (3, 6, 6, 6)
    shift: str = "covariate"
    d: int = 16
    C: int = 10
    samples_per_client: int = 2000
    margin: float = 5.0
    train_fraction: float = 0.8
    path: Optional[str] = None


@dataclass(frozen=True)
class ExperimentConfig:
    """all knobs of one experiment; defaults follow the desk-scale setup."""

    algorithm: str = "rdpcfl"
    algorithms: tuple[str, ...] = ()
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    predictor: str = "logreg"
    hidden: int = 32
    epsilon: float = 5.0
    delta: float = 1e-4
    rounds: int = 200
    epochs: int = 1
    lr: float = 0.1
    clip: float = 1.0
    b1: Union[str, int] = "full"
    b_rest: Union[str, int] = 32
    num_clusters: Union[str, int] = 4
    cluster_candidates: tuple[int, ...] = (2, 3, 4, 5, 6, 7, 8)
    select_fraction: float = 0.03
    mrmtl_lambda: float = 1.0
    seeds: tuple[int, ...] = (0,)
    epsilon_grid: tuple[float, ...] = DEFAULT_EPSILON_GRID
    soft_weights: bool = False
    nonprivate_selection: bool = False
    jobs: int = 1
    # tune
    lr_grid: tuple[float, ...] = DEFAULT_LR_GRID
    clip_grid: tuple[float, ...] = DEFAULT_CLIP_GRID
    validation_fraction: float = 0.2
    # mss-sweep
    mss_samples_grid: tuple[int, ...] = (500, 2000)
    mss_b_rest_grid: tuple[int, ...] = (8, 32)
    schema_version: int = SCHEMA_VERSION

    @property
    def run_algorithms(self) -> tuple[str, ...]:
        """algorithms executed by run/sweep."""
        return self.algorithms or (self.algorithm,)

    def batch_size_first(self, N: int) -> int:
        """b1 for a client with N training examples."""
        return N if self.b1 == "full" else min(int(self.b1), N)

    def batch_size_rest(self, N: int) -> int:
        """
        batch size after round 1 for a client with N training examples.

        "auto" picks b so that N / b = rounds * epochs, i.e. one pass over the
        local data across the whole run.
        """
        if self.b_rest == "auto":
            return min(max(1, round(N / (self.rounds * self.epochs))), N)
        return min(int(self.b_rest), N)

    def with_epsilon(self, epsilon: float) -> "ExperimentConfig":
        """copy with another total budget."""
        return replace(self, epsilon=epsilon)


_TUPLE_FIELDS = {
    "algorithms",
    "cluster_candidates",
    "seeds",
    "epsilon_grid",
    "cluster_sizes",
    "lr_grid",
    "clip_grid",
    "mss_samples_grid",
    "mss_b_rest_grid",
}


def _coerce(name: str, value: Any) -> Any:
    if name in _TUPLE_FIELDS:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"'{name}' must be a list")
        return tuple(value)
    return value


def _build(cls: type, data: dict[str, Any], where: str) -> Any:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown {where} key(s): {', '.join(unknown)}")
    return {name: _coerce(name, value) for name, value in data.items()}


def config_from_dict(data: dict[str, Any]) -> ExperimentConfig:
    """
    builds a config from parsed JSON.

    Args:
        data: JSON object; missing keys take defaults

    Returns:
        validated config

    Raises:
        ConfigError: on unknown keys, wrong schema version or invalid values
    """
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schema_version {version} (expected {SCHEMA_VERSION})"
        )

    values = dict(data)
    dataset_data = values.pop("dataset", {}) or {}
    if not isinstance(dataset_data, dict):
        raise ConfigError("'dataset' must be an object")
    dataset = DatasetSpec(**_build(DatasetSpec, dataset_data, "dataset"))
    try:
        config = ExperimentConfig(
            dataset=dataset, **_build(ExperimentConfig, values, "config")
        )
    except TypeError as e:
        raise ConfigError(str(e)) from e
    validate_config(config)
    return config


def config_to_dict(config: ExperimentConfig) -> dict[str, Any]:
    """serializes a config to JSON-compatible values."""
    data = asdict(config)
    for key, value in list(data.items()):
        if isinstance(value, tuple):
            data[key] = list(value)
    data["dataset"]["cluster_sizes"] = list(config.dataset.cluster_sizes)
    return data


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def validate_config(config: ExperimentConfig) -> None:
    """raises ConfigError if any value is out of range."""
    for name in config.run_algorithms:
        _check(name in ALGORITHMS, f"unknown algorithm '{name}'")
    _check(config.epsilon > 0, "epsilon must be positive")
    _check(0.0 < config.delta < 1.0, "delta must be in (0, 1)")
    _check(config.rounds >= 2, "rounds must be >= 2")
    _check(config.epochs >= 1, "epochs must be >= 1")
    _check(config.lr > 0, "lr must be positive")
    _check(config.clip > 0, "clip must be positive")
    _check(
        config.b1 == "full" or (isinstance(config.b1, int) and config.b1 >= 1),
        "b1 must be 'full' or a positive integer",
    )
    _check(
        config.b_rest == "auto"
        or (isinstance(config.b_rest, int) and config.b_rest >= 1),
        "b_rest must be 'auto' or a positive integer",
    )
    _check(
        config.num_clusters == "auto"
        or (isinstance(config.num_clusters, int) and config.num_clusters >= 1),
        "num_clusters must be 'auto' or a positive integer",
    )
    _check(
        bool(config.cluster_candidates) and min(config.cluster_candidates) >= 1,
        "cluster_candidates must be positive integers",
    )
    _check(0.0 < config.select_fraction < 1.0, "select_fraction must be in (0, 1)")
    _check(config.mrmtl_lambda >= 0, "mrmtl_lambda must be >= 0")
    _check(bool(config.seeds), "seeds must not be empty")
    _check(all(e > 0 for e in config.epsilon_grid), "epsilon_grid must be positive")
    _check(config.jobs >= 1, "jobs must be >= 1")
    _check(
        bool(config.lr_grid) and all(lr > 0 for lr in config.lr_grid),
        "lr_grid must hold positive learning rates",
    )
    _check(
        bool(config.clip_grid) and all(c > 0 for c in config.clip_grid),
        "clip_grid must hold positive thresholds",
    )
    _check(
        0.0 < config.validation_fraction < 1.0, "validation_fraction must be in (0, 1)"
    )
    _check(
        bool(config.mss_samples_grid) and min(config.mss_samples_grid) >= 2,
        "mss_samples_grid must hold sizes >= 2",
    )
    _check(
        bool(config.mss_b_rest_grid) and min(config.mss_b_rest_grid) >= 1,
        "mss_b_rest_grid must hold positive batch sizes",
    )
    spec = config.dataset
    _check(spec.shift in ("covariate", "concept"), f"unknown shift '{spec.shift}'")
    _check(spec.d >= 2 and spec.C >= 2, "dataset needs d >= 2 and C >= 2")
    _check(
        bool(spec.cluster_sizes) and min(spec.cluster_sizes) >= 1,
        "cluster_sizes must be positive",
    )
    _check(0.0 < spec.train_fraction < 1.0, "train_fraction must be in (0, 1)")


def load_config(
    path: Optional[Path] = None, overrides: Optional[dict[str, Any]] = None
) -> ExperimentConfig:
    """
    loads a JSON config file and applies flag overrides on top.

    Args:
        path: optional config file
        overrides: top-level keys from command-line flags (None values ignored)

    Returns:
        validated config
    """
    data: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key.startswith("dataset."):
            data.setdefault("dataset", {})[key.split(".", 1)[1]] = value
        else:
            data[key] = value
    return config_from_dict(data)


def default_output_dir() -> Path:
    """output directory from DPCFL_OUTPUT_DIR, else ./dpcfl-out."""
    return Path(os.environ.get(OUTPUT_DIR_ENV, DEFAULT_OUTPUT_DIR))
