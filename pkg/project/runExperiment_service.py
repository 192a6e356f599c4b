import asyncio
import logging
import math
from contextlib import nullcontext
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Tuple

from project.config import ExperimentConfig, load_config, write_manifest
from project.engine import run_schedule
from project.errors import ConfigError
from project.runlog import RunLogWriter, is_complete, log_filename, read_runlog
from pydantic import BaseModel, ValidationError

logger = logging.getLogger(__name__)


class RunSummary(BaseModel):
    """
    Ledger summary of one (arm, seed) run.
    """

    arm: str
    seed: int
    path: str
    used_steps: int
    final_objective: float
    phase1_steps: Optional[int] = None
    retrain_steps: Optional[int] = None
    skipped: bool = False

    def describe(self) -> str:
        if self.skipped:
            return (
                f"{self.arm} seed {self.seed}: already complete, "
                f"objective {self.final_objective:.4f} at {self.used_steps} steps"
            )
        return (
            f"{self.arm} seed {self.seed}: objective {self.final_objective:.4f}, "
            f"used {self.used_steps} steps "
            f"(phase1 {self.phase1_steps}, retrain {self.retrain_steps})"
        )


class RunExperimentResponse(BaseModel):
    """
    Outcome of running every arm of an experiment for every repetition.
    """

    out_dir: str
    runs: List[RunSummary]


def run_one(
    config_json: str, arm: str, seed: int, out_dir: str, candidate_workers: int = 1
) -> RunSummary:
    """
    Runs (or resumes) a single arm for a single master seed, streaming rows to
    '{arm}_{seed}.csv'. A log that already has its final row is left untouched.

    With candidate_workers > 1 the controller candidates of each generation are
    simulated in a process pool of that size.
    """
    config = ExperimentConfig.model_validate_json(config_json)
    path = Path(out_dir) / log_filename(arm, seed)
    if is_complete(path):
        final = read_runlog(path).final
        return RunSummary(
            arm=arm,
            seed=seed,
            path=str(path),
            used_steps=final.used_steps,
            final_objective=final.objective,
            skipped=True,
        )
    logger.info("running %s seed %d", arm, seed)
    pool = (
        ProcessPoolExecutor(max_workers=candidate_workers)
        if candidate_workers > 1
        else nullcontext()
    )
    with pool as executor:
        log = run_schedule(
            config.schedule_config(arm, seed),
            config.environment(),
            on_row=RunLogWriter(path),
            executor=executor,
        )
    final = log.final
    return RunSummary(
        arm=arm,
        seed=seed,
        path=str(path),
        used_steps=log.ledger.used_steps,
        final_objective=final.objective if final else -math.inf,
        phase1_steps=log.ledger.phase1_steps,
        retrain_steps=log.ledger.retrain_steps,
    )


def prepare_out_dir(config: ExperimentConfig, out_dir: Optional[str]) -> Path:
    """
    Resolves and creates the output directory and stores the resolved configuration
    in it. Fails before anything runs if the directory cannot be written.
    """
    target = out_dir or config.output_dir
    if not target:
        raise ConfigError("no output directory given", key="experiment.output_dir")
    path = Path(target)
    try:
        path.mkdir(parents=True, exist_ok=True)
        write_manifest(config, path)
    except OSError as e:
        raise ConfigError(f"output directory {path} is not writable: {e}") from e
    return path


def _plan_workers(jobs: int, runs: int) -> Tuple[Executor, int]:
    """
    Splits the jobs between whole runs and, when there are fewer runs than jobs,
    the candidate evaluations inside each run.
    """
    if jobs > 1 and 0 < runs < jobs:
        return ThreadPoolExecutor(max_workers=runs), jobs // runs
    if jobs > 1:
        return ProcessPoolExecutor(max_workers=jobs), 1
    return ThreadPoolExecutor(max_workers=1), 1


async def runExperiment(
    config_path: str,
    out_dir: Optional[str] = None,
    seed_offset: int = 0,
    jobs: int = 1,
) -> RunExperimentResponse:
    """
    Executes every (arm x repetition) run of an experiment config, one RunLog CSV per
    run. Partially written logs are resumed; complete ones are skipped.

    Args:
        config_path (str): Path of the dotted-key config file.
        out_dir (Optional[str]): Output directory; experiment.output_dir when omitted.
        seed_offset (int): Added to every master seed (repetition r runs seed r + offset);
            0 keeps experiment.seed_offset from the config.
        jobs (int): Number of worker processes. Output never depends on it.

    Returns:
        RunExperimentResponse: Ledger summaries in (arm, seed) order.
    """
    if seed_offset < 0:
        raise ConfigError("seed offset must be non-negative")
    if jobs < 1:
        raise ConfigError("jobs must be at least 1")
    config = load_config(Path(config_path))
    if not config.arms:
        raise ConfigError("config defines no schedule arms")
    if seed_offset:
        config = config.model_copy(update={"seed_offset": seed_offset})
    for arm in config.arms:
        try:
            config.schedule_config(arm, config.seed_offset)
        except ValidationError as e:
            raise ConfigError(e.errors()[0]["msg"], key=f"schedule.{arm}") from e
    path = prepare_out_dir(config, out_dir)
    config_json = config.model_dump_json()
    tasks = [(arm, seed) for arm in config.arms for seed in config.seeds()]
    logger.info(
        "%d runs (%d arms x %d seeds) into %s with %d jobs",
        len(tasks),
        len(config.arms),
        config.repetitions,
        path,
        jobs,
    )
    loop = asyncio.get_running_loop()
    runner, candidate_workers = _plan_workers(jobs, len(tasks))
    with runner as pool:
        futures = [
            loop.run_in_executor(
                pool, run_one, config_json, arm, seed, str(path), candidate_workers
            )
            for arm, seed in tasks
        ]
        runs = await asyncio.gather(*futures)
    for run in runs:
        logger.info(run.describe())
    return RunExperimentResponse(out_dir=str(path), runs=list(runs))
