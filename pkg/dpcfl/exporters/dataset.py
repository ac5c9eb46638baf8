"""federated dataset files: one CSV per client plus a JSON manifest."""

import csv
import json
import logging
from pathlib import Path
from typing import Any, Optional

import ijson
import numpy as np

from dpcfl.core.config import SCHEMA_VERSION
from dpcfl.core.models import ClientData, Dataset, FederatedDataset
from dpcfl.errors import ConfigError
from dpcfl.exporters.base import Exporter, prepare_destination

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"

# top-level scalar fields of a manifest
_MANIFEST_SCALARS = {"schema_version", "seed", "shift", "d", "C", "margin", "train_fraction"}


def client_file_name(client_id: int) -> str:
    """file name of a client's CSV."""
    return f"client_{client_id}.csv"


def _format(value: float) -> str:
    # shortest repr round-trips exactly
    return repr(float(value))


class DatasetExporter(Exporter[FederatedDataset]):  # pylint: disable=too-few-public-methods
    """writes a federated dataset as client CSVs and a manifest."""

    def __init__(self, metadata: Optional[dict[str, Any]] = None) -> None:
        """
        Initialize dataset exporter.

        Args:
            metadata: extra manifest fields (generation margin, train fraction)
        """
        self.metadata = dict(metadata or {})

    def export(
        self, payload: FederatedDataset, destination: Path, overwrite: bool = True
    ) -> list[Path]:
        """
        Export every client to client_<id>.csv and the manifest to manifest.json.

        Each CSV has header f0..f{d-1},label and lists train rows before test rows.

        Args:
            payload: dataset to write
            destination: output directory
            overwrite: if False, refuse to replace existing files

        Returns:
            written paths, manifest last
        """
        targets = [destination / client_file_name(c.client_id) for c in payload.clients]
        manifest_path = destination / MANIFEST_NAME
        prepare_destination(destination, targets + [manifest_path], overwrite)

        header = [f"f{j}" for j in range(payload.d)] + ["label"]
        entries = []
        for client, path in zip(payload.clients, targets):
            with open(path, "w", encoding="utf-8", newline="") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(header)
                for part in (client.train, client.test):
                    for x, y in zip(part.x, part.y):
                        writer.writerow([_format(v) for v in x] + [int(y)])
            entries.append(
                {
                    "client_id": client.client_id,
                    "cluster": client.true_cluster,
                    "file": path.name,
                    "train_rows": len(client.train),
                    "test_rows": len(client.test),
                }
            )

        manifest = {
            "schema_version": SCHEMA_VERSION,
            "seed": payload.seed,
            "shift": payload.shift,
            "d": payload.d,
            "C": payload.C,
            "cluster_sizes": list(payload.cluster_sizes),
            **self.metadata,
            "clients": entries,
        }
        with open(manifest_path, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2)
            f.write("\n")

        logger.info("wrote %d client file(s) to %s", len(targets), destination)
        return targets + [manifest_path]


def write_federated_dataset(
    dataset: FederatedDataset,
    destination: Path,
    metadata: Optional[dict[str, Any]] = None,
) -> list[Path]:
    """writes dataset files, replacing existing ones."""
    return DatasetExporter(metadata).export(dataset, destination, overwrite=True)


def _read_manifest(path: Path) -> tuple[dict[str, Any], list[dict[str, Any]]]:
    """stream-parses the manifest header fields and its client entries."""
    header: dict[str, Any] = {"cluster_sizes": []}
    with open(path, "rb") as f:
        for prefix, event, value in ijson.parse(f):
            if prefix in _MANIFEST_SCALARS and event in ("number", "string"):
                header[prefix] = value
            elif prefix == "cluster_sizes.item" and event == "number":
                header["cluster_sizes"].append(int(value))
    with open(path, "rb") as f:
        clients = [dict(entry) for entry in ijson.items(f, "clients.item")]
    return header, clients


def _load_client(
    directory: Path, entry: dict[str, Any], d: int
) -> ClientData:
    path = directory / str(entry["file"])
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if table.shape[1] != d + 1:
        raise ConfigError(f"{path.name}: expected {d + 1} columns, got {table.shape[1]}")
    n_train = int(entry["train_rows"])
    n_test = int(entry["test_rows"])
    if len(table) != n_train + n_test:
        raise ConfigError(
            f"{path.name}: expected {n_train + n_test} rows, got {len(table)}"
        )
    x = np.ascontiguousarray(table[:, :d], dtype=np.float64)
    y = table[:, d].astype(np.int64)
    return ClientData(
        client_id=int(entry["client_id"]),
        true_cluster=int(entry["cluster"]),
        train=Dataset(x[:n_train], y[:n_train]),
        test=Dataset(x[n_train:], y[n_train:]),
    )


def load_federated_dataset(directory: Path) -> FederatedDataset:
    """
    reads a dataset written by DatasetExporter.

    Args:
        directory: directory holding manifest.json and the client CSVs

    Returns:
        federated dataset with clients in manifest order

    Raises:
        ConfigError: if the manifest is missing, has another schema version, or
            disagrees with a client file
    """
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise ConfigError(f"dataset manifest not found: {manifest_path}")
    header, entries = _read_manifest(manifest_path)
    if header.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported dataset schema_version {header.get('schema_version')}"
        )
    d = int(header["d"])
    clients = tuple(_load_client(directory, entry, d) for entry in entries)
    if sum(header["cluster_sizes"]) != len(clients):
        raise ConfigError("manifest cluster sizes do not match its client list")

    logger.debug("loaded %d client(s) from %s", len(clients), directory)
    return FederatedDataset(
        clients=clients,
        d=d,
        C=int(header["C"]),
        cluster_sizes=tuple(header["cluster_sizes"]),
        shift=str(header["shift"]),
        seed=int(header["seed"]),
    )
