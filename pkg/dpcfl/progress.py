"""console output for experiment commands: spinners, a bar over run cells, tables."""

from collections.abc import Sequence
from typing import Any, Optional

from rich.console import Console
from rich.progress import (
    BarColumn,
    MofNCompleteColumn,
    Progress,
    ProgressColumn,
    SpinnerColumn,
    TaskID,
    TextColumn,
    TimeElapsedColumn,
)
from rich.table import Table


def _phase_columns() -> list[ProgressColumn]:
    return [SpinnerColumn(), TextColumn("[progress.description]{task.description}")]


class ProgressHandler:
    """
    owns everything an experiment command shows on stderr.

    Spinners and the cell bar only appear with show_progress; info lines, tables
    and the closing summary are suppressed by quiet; errors always print.
    """

    def __init__(self, quiet: bool = False, show_progress: bool = False) -> None:
        self.quiet = quiet
        self.show_progress = show_progress
        self._console = Console(stderr=True)
        self._progress: Optional[Progress] = None
        self._task_id: Optional[TaskID] = None

    def __enter__(self) -> "ProgressHandler":
        return self

    def __exit__(
        self,
        exc_type: Optional[type],
        exc_val: Optional[BaseException],
        exc_tb: Optional[object],
    ) -> None:
        self._stop()

    def _stop(self) -> None:
        if self._progress is not None:
            self._progress.stop()
            self._progress = None
            self._task_id = None

    def _begin(
        self,
        columns: Sequence[ProgressColumn],
        description: str,
        total: Optional[int],
        **fields: Any,
    ) -> None:
        # one live display at a time
        self._stop()
        self._progress = Progress(*columns, console=self._console, transient=True)
        self._progress.start()
        self._task_id = self._progress.add_task(description, total=total, **fields)

    def start_phase(self, description: str) -> None:
        """spinner for a step of unknown length (data generation, calibration)."""
        if self.show_progress:
            self._begin(_phase_columns(), description, None)

    def set_total(self, total: int) -> None:
        """replaces any spinner with a bar over total run cells."""
        if not self.show_progress:
            return

        columns = _phase_columns() + [
            BarColumn(),
            MofNCompleteColumn(),
            TimeElapsedColumn(),
            TextColumn("- {task.fields[cell]}"),
        ]
        self._begin(columns, "Running", total, cell="")

    def update(self, cell: str) -> None:
        """marks one cell done."""
        if self._progress is None or self._task_id is None:
            return

        self._progress.update(self._task_id, advance=1, cell=cell)

    def log_error(self, message: str) -> None:
        """prints an error line, quiet or not."""
        self._console.print(f"[red]ERROR:[/red] {message}")

    def log_info(self, message: str) -> None:
        """prints an info line unless quiet or a live display owns the console."""
        if not (self.quiet or self.show_progress):
            self._console.print(message)

    def print_table(
        self, title: str, columns: Sequence[str], rows: Sequence[Sequence[str]]
    ) -> None:
        """renders rows under title; the first column is a label, the rest right-aligned."""
        if self.quiet:
            return

        self._stop()
        table = Table(title=title)
        for i, column in enumerate(columns):
            table.add_column(column, justify="left" if i == 0 else "right")
        for row in rows:
            table.add_row(*row)
        self._console.print(table)

    def finish(self, processed: int, failed: int) -> None:
        self._stop()

        if not self.quiet:
            self._console.print(
                f"Completed {processed + failed} run(s): "
                f"{processed} succeeded, {failed} failed"
            )
