import logging
from pathlib import Path
from typing import Optional

from project.config import MANIFEST_NAME, read_manifest
from project.errors import ContractViolationError, MissingArtifactError
from project.genome import from_payload
from project.physics import LocomotionEnvironment
from project.runlog import read_runlog
from pydantic import BaseModel

logger = logging.getLogger(__name__)


class ReplayRunResponse(BaseModel):
    """
    Where the trace went and whether the re-simulation reproduced the logged score.
    """

    trajectory_path: str
    frames: int
    objective: float
    logged_objective: float
    reproduced: bool


def _environment(runlog_path: Path) -> LocomotionEnvironment:
    if (runlog_path.parent / MANIFEST_NAME).exists():
        return read_manifest(runlog_path.parent).environment()
    return LocomotionEnvironment()


def _format_frame(step: int, com_x: float, positions) -> str:
    coords = " ".join(f"{float(x)!r} {float(y)!r}" for x, y in positions)
    return f"{step} {float(com_x)!r} {coords}\n"


async def replayRun(
    runlog_path: str, row_index: int, out_path: Optional[str] = None
) -> ReplayRunResponse:
    """
    Re-simulates the design stored in one run-log row and writes its node positions
    after every step, one line per step: 'step com_x x0 y0 x1 y1 ...'.

    Args:
        runlog_path (str): A '{arm}_{seed}.csv' run log.
        row_index (int): 0-based data row (header excluded).
        out_path (Optional[str]): Trace file; next to the log by default.

    Returns:
        ReplayRunResponse: The trace path, its frame count and the reproduced objective.
    """
    path = Path(runlog_path)
    log = read_runlog(path)
    if not 0 <= row_index < len(log.rows):
        raise ContractViolationError(
            f"row {row_index} out of range, {path} has {len(log.rows)} rows"
        )
    row = log.rows[row_index]
    if not row.payload:
        raise MissingArtifactError(
            f"row {row_index} of {path} ({row.event.value}) carries no design to replay",
            [f"{path}:{row_index}"],
        )
    payload = from_payload(row.payload)
    trajectory = _environment(path).trajectory(
        payload.genome, payload.controller, payload.episode_steps
    )
    target = (
        Path(out_path)
        if out_path
        else path.with_name(f"{path.stem}_row{row_index}.trajectory.txt")
    )
    with target.open("w") as handle:
        for step in range(1, len(trajectory.frames)):
            handle.write(
                _format_frame(step, trajectory.com_x[step], trajectory.frames[step])
            )
    objective = trajectory.result.objective
    reproduced = objective == row.objective
    if not reproduced:
        logger.warning(
            "replayed objective %r differs from the logged %r", objective, row.objective
        )
    return ReplayRunResponse(
        trajectory_path=str(target),
        frames=len(trajectory.frames) - 1,
        objective=objective,
        logged_objective=row.objective,
        reproduced=reproduced,
    )
