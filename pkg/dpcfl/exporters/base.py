"""base exporter interface."""

from abc import ABC, abstractmethod
from pathlib import Path
from typing import Generic, TypeVar

T = TypeVar("T")


class Exporter(ABC, Generic[T]):  # pylint: disable=too-few-public-methods
    """abstract base class for writers of simulator artifacts."""

    @abstractmethod
    def export(self, payload: T, destination: Path, overwrite: bool = True) -> list[Path]:
        """
        Export a payload into the destination directory.

        Args:
            payload: object to write
            destination: output directory (created if missing)
            overwrite: if False, refuse to replace existing files

        Returns:
            paths of the written files
        """
        ...  # pylint: disable=unnecessary-ellipsis


def prepare_destination(destination: Path, targets: list[Path], overwrite: bool) -> None:
    """creates destination and checks that targets may be written."""
    destination.mkdir(parents=True, exist_ok=True)
    if overwrite:
        return
    existing = [t.name for t in targets if t.exists()]
    if existing:
        raise FileExistsError(
            f"{destination} already holds {', '.join(existing)} (pass overwrite)"
        )
