import csv
import io
import logging
from pathlib import Path
from typing import List, Optional, Tuple

from project.engine import RunEvent, RunLog, RunLogRow
from project.errors import MissingArtifactError

logger = logging.getLogger(__name__)

CSV_HEADER = ["used_steps", "event", "genome_id", "objective", "complexity", "payload"]


def log_filename(arm: str, seed: int) -> str:
    return f"{arm}_{seed}.csv"


def parse_filename(path: Path) -> Tuple[str, int]:
    """
    Splits '{arm}_{seed}.csv' into the arm name and the master seed.
    """
    arm, _, seed = path.stem.rpartition("_")
    if not arm or not seed.isdigit():
        raise ValueError(f"{path.name} is not named '<arm>_<seed>.csv'")
    return arm, int(seed)


def format_row(row: RunLogRow) -> str:
    buffer = io.StringIO()
    csv.writer(buffer, lineterminator="\n").writerow(
        [
            row.used_steps,
            row.event.value,
            row.genome_id,
            repr(float(row.objective)),
            row.complexity,
            row.payload,
        ]
    )
    return buffer.getvalue()


def _complete_lines(path: Path) -> List[str]:
    """
    Lines of a possibly half-written log; a trailing line without newline is dropped.
    """
    if not path.exists():
        return []
    text = path.read_text()
    lines = text.splitlines(keepends=True)
    if lines and not lines[-1].endswith("\n"):
        logger.warning("dropping incomplete last line of %s", path)
        lines = lines[:-1]
    return lines


def _parse_rows(lines: List[str], path: Path) -> List[RunLogRow]:
    if not lines:
        return []
    reader = csv.reader(lines)
    header = next(reader)
    if header != CSV_HEADER:
        raise ValueError(f"{path} does not have the run-log header")
    return [
        RunLogRow(
            used_steps=int(fields[0]),
            event=RunEvent(fields[1]),
            genome_id=fields[2],
            objective=float(fields[3]),
            complexity=int(fields[4]),
            payload=fields[5],
        )
        for fields in reader
    ]


def read_runlog(path: Path, schedule: Optional[str] = None) -> RunLog:
    """
    Loads a run log; the arm name and master seed come from the file name.
    """
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"run log {path} not found", [str(path)])
    _, seed = parse_filename(path)
    rows = _parse_rows(_complete_lines(path), path)
    return RunLog(schedule=schedule or "", master_seed=seed, rows=rows)


def is_complete(path: Path) -> bool:
    try:
        rows = _parse_rows(_complete_lines(path), path)
    except ValueError:
        return False
    return bool(rows) and rows[-1].event == RunEvent.FINAL


class RunLogWriter:
    """
    Appends rows to a run-log CSV as they are produced.

    If the file already holds rows from an interrupted run, they are kept as long as
    the deterministic re-run reproduces them, and writing continues after them. At the
    first mismatching row the file is cut back to the agreeing prefix.
    """

    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        lines = _complete_lines(self.path)
        try:
            self.existing = [format_row(r) for r in _parse_rows(lines, self.path)]
        except ValueError:
            logger.warning("%s is not a readable run log, starting over", self.path)
            self.existing = []
        self.verified = 0
        self._rewrite(self.existing)
        if self.existing:
            logger.info("resuming %s after %d rows", self.path, len(self.existing))

    def _rewrite(self, rows: List[str]) -> None:
        with self.path.open("w", newline="") as handle:
            handle.write(",".join(CSV_HEADER) + "\n")
            handle.writelines(rows)

    def __call__(self, row: RunLogRow) -> None:
        line = format_row(row)
        if self.verified < len(self.existing):
            if self.existing[self.verified] == line:
                self.verified += 1
                return
            logger.warning(
                "%s diverges from the re-run at row %d, rewriting from there",
                self.path,
                self.verified,
            )
            self.existing = self.existing[: self.verified]
            self._rewrite(self.existing)
        with self.path.open("a", newline="") as handle:
            handle.write(line)
            handle.flush()
        self.existing.append(line)
        self.verified = len(self.existing)
