import logging
import math
from concurrent.futures import Executor
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from project.budget import (
    DEFAULT_MAX_STEPS,
    BudgetCategory,
    BudgetLedger,
    ReductionConfig,
    charge,
    effective_budget,
)
from project.controller import (
    ControllerAlgorithm,
    ControllerParams,
    TrainingBudget,
    TrainingResult,
    train_controller,
)
from project.genome import (
    DEFAULT_SIZE_BIAS,
    DesignPayload,
    MorphologyGenome,
    complexity,
    from_payload,
    mutate,
    random_genome,
    to_payload,
)
from project.optimizers import EsConfig, es_step
from project.physics import LocomotionEnvironment
from pydantic import BaseModel, Field, model_validator

logger = logging.getLogger(__name__)

STREAM_TAGS = {
    "design-init": 1,
    "design-mutation": 2,
    "train": 3,
    "improvement": 4,
    "retrain": 5,
}
CHEATING_REAR_SHARE = 0.1


class ScheduleKind(str, Enum):
    SINGLE_PHASE = "single_phase"
    RETRAIN_END = "retrain_end"
    RETRAIN_EVERY_NEW_BEST = "retrain_every_new_best"


class RunEvent(str, Enum):
    DESIGN_EVAL = "design_eval"
    NEW_BEST = "new_best"
    RETRAIN = "retrain"
    FINAL = "final"


class ScheduleConfig(BaseModel):
    """
    One co-optimization arm: which schedule runs, under which budgets and seed.

    retrain_budget defaults to the unreduced bases of the reduction config.
    """

    schedule: ScheduleKind = ScheduleKind.SINGLE_PHASE
    reduction: ReductionConfig = Field(default_factory=ReductionConfig)
    retrain_budget: Optional[TrainingBudget] = None
    design_algo: EsConfig = Field(default_factory=EsConfig)
    controller_algorithm: ControllerAlgorithm = ControllerAlgorithm.CMAES
    max_steps: int = Field(default=DEFAULT_MAX_STEPS, ge=1)
    master_seed: int = Field(default=0, ge=0)
    size_bias: float = Field(default=DEFAULT_SIZE_BIAS, ge=0, le=1)

    @model_validator(mode="after")
    def check_retrain_budget(self) -> "ScheduleConfig":
        if self.retrain_budget is None:
            self.retrain_budget = self.reduction.base_budget()
        reduced = effective_budget(self.reduction)
        if (
            self.retrain_budget.episodes < reduced.episodes
            or self.retrain_budget.episode_steps < reduced.episode_steps
        ):
            raise ValueError(
                "retrain_budget must be at least the reduced training budget in "
                "both episodes and episode length"
            )
        return self

    @property
    def training_budget(self) -> TrainingBudget:
        return effective_budget(self.reduction)


class RunLogRow(BaseModel):
    used_steps: int
    event: RunEvent
    genome_id: str
    objective: float
    complexity: int
    payload: str = ""


class RunLog(BaseModel):
    """
    Append-only record of a run. Every analysis is derived from these rows.
    """

    schedule: str = ScheduleKind.SINGLE_PHASE.value
    master_seed: int = 0
    rows: List[RunLogRow] = Field(default_factory=list)
    ledger: Optional[BudgetLedger] = None

    def by_event(self, event: RunEvent) -> List[RunLogRow]:
        return [row for row in self.rows if row.event == event]

    @property
    def final(self) -> Optional[RunLogRow]:
        finals = self.by_event(RunEvent.FINAL)
        return finals[-1] if finals else None


class RngStreams:
    """
    Independent named random streams split from one master seed.

    Each (name, index) pair gets its own Philox generator, so the stream a design
    trains with does not depend on how many draws other designs made.
    """

    def __init__(self, master_seed: int):
        self.master_seed = master_seed

    def stream(self, name: str, index: int = 0) -> np.random.Generator:
        seed = np.random.SeedSequence(
            self.master_seed, spawn_key=(STREAM_TAGS[name], index)
        )
        return np.random.Generator(np.random.Philox(seed))


class DesignRecord(BaseModel):
    index: int
    genome: MorphologyGenome
    training: TrainingResult
    budget: TrainingBudget

    @property
    def objective(self) -> float:
        return self.training.objective


RowSink = Callable[[RunLogRow], None]


def retrain_reserve(config: ScheduleConfig) -> int:
    """
    Steps kept back for the final retraining of retrain-end. Retraining with the very
    budget used during co-optimization reproduces the recorded training, so nothing
    needs to be reserved then.
    """
    if config.retrain_budget == config.training_budget:
        return 0
    return config.retrain_budget.steps


class _CoOptimizer:
    """
    Shared machinery of the schedules: the ledger, the log, the random streams and a
    cache of finished trainings.
    """

    def __init__(
        self,
        config: ScheduleConfig,
        env: Optional[LocomotionEnvironment],
        on_row: Optional[RowSink],
        executor: Optional[Executor],
    ):
        self.config = config
        self.env = env or LocomotionEnvironment()
        self.on_row = on_row
        self.executor = executor
        self.ledger = BudgetLedger(max_steps=config.max_steps)
        self.log = RunLog(schedule=config.schedule.value, master_seed=config.master_seed)
        self.streams = RngStreams(config.master_seed)
        self.cache: Dict[Tuple[str, int, int], TrainingResult] = {}
        self.next_index = 0
        self.retrain_events = 0
        self.stopped = False

    def emit(
        self,
        event: RunEvent,
        record: Optional[DesignRecord] = None,
        training: Optional[TrainingResult] = None,
        budget: Optional[TrainingBudget] = None,
    ) -> None:
        training = training or (record.training if record else None)
        budget = budget or (record.budget if record else None)
        payload = ""
        # a payload is only logged for a controller that was actually scored
        scored = training is not None and training.episodes_run > 0
        if record is not None and event != RunEvent.DESIGN_EVAL and scored:
            payload = to_payload(
                record.genome,
                training.controller.values,
                record.index,
                budget.episode_steps,
            )
        row = RunLogRow(
            used_steps=self.ledger.used_steps,
            event=event,
            genome_id=record.genome.genome_id if record else "",
            objective=training.objective if training else -math.inf,
            complexity=complexity(record.genome) if record else 0,
            payload=payload,
        )
        self.log.rows.append(row)
        if self.on_row is not None:
            self.on_row(row)

    def train(
        self,
        genome: MorphologyGenome,
        stream: Tuple[str, int],
        budget: TrainingBudget,
        limit: int,
        category: BudgetCategory,
    ) -> TrainingResult:
        key = (genome.genome_id, budget.episodes, budget.episode_steps)
        if key in self.cache:
            logger.debug("training cache hit for %s", genome.genome_id)
            return self.cache[key]
        result = train_controller(
            genome,
            budget,
            self.streams.stream(*stream),
            self.config.controller_algorithm,
            self.env,
            step_limit=max(0, limit - self.ledger.used_steps),
            executor=self.executor,
        )
        charge(self.ledger, result.steps_used, category)
        if result.completed:
            self.cache[key] = result
        return result

    def evaluate(self, genome: MorphologyGenome, limit: int) -> Optional[DesignRecord]:
        if self.stopped or self.ledger.used_steps >= limit:
            self.stopped = True
            return None
        index = self.next_index
        self.next_index += 1
        budget = self.config.training_budget
        training = self.train(
            genome, ("train", index), budget, limit, BudgetCategory.PHASE1
        )
        if not training.completed:
            logger.debug("design %d cut short by the budget, discarded", index)
            self.stopped = True
            return None
        record = DesignRecord(index=index, genome=genome, training=training, budget=budget)
        self.emit(RunEvent.DESIGN_EVAL, record)
        return record

    def retrain(self, record: DesignRecord) -> TrainingResult:
        # one "retrain" stream per retraining event, counted from 0 within the run
        event = self.retrain_events
        self.retrain_events += 1
        result = self.train(
            record.genome,
            ("retrain", event),
            self.config.retrain_budget,
            self.config.max_steps,
            BudgetCategory.RETRAIN,
        )
        logger.info(
            "retrained design %d: %g -> %g", record.index, record.objective, result.objective
        )
        return result

    def co_optimize(
        self, limit: int, on_evaluated: Callable[[DesignRecord], bool]
    ) -> None:
        """
        The design-level evolution strategy. Runs until the step limit is reached or
        on_evaluated asks to stop.
        """
        es = self.config.design_algo
        init_rng = self.streams.stream("design-init")
        population: List[DesignRecord] = []
        for _ in range(es.mu):
            record = self.evaluate(random_genome(init_rng, self.config.size_bias), limit)
            if record is None:
                return
            population.append(record)
            if not on_evaluated(record):
                return
        generation = 0
        while True:
            pool = es_step(
                population,
                [r.objective for r in population],
                es,
                lambda r, rng: mutate(r.genome, rng),
                self.streams.stream("design-mutation", generation),
            )
            survivors = es.mu if es.elitist else 0
            population = list(pool[:survivors])
            for child in pool[survivors:]:
                record = self.evaluate(child, limit)
                if record is None:
                    return
                population.append(record)
                if not on_evaluated(record):
                    return
            generation += 1

    def finish(
        self,
        record: Optional[DesignRecord],
        training: Optional[TrainingResult],
        budget: Optional[TrainingBudget],
    ) -> RunLog:
        self.emit(RunEvent.FINAL, record, training, budget)
        self.log.ledger = self.ledger.model_copy()
        logger.info(
            "%s seed %d finished: objective=%g used=%d/%d (phase1=%d retrain=%d)",
            self.config.schedule.value,
            self.config.master_seed,
            self.log.rows[-1].objective,
            self.ledger.used_steps,
            self.ledger.max_steps,
            self.ledger.phase1_steps,
            self.ledger.retrain_steps,
        )
        return self.log


def _track_best(
    run: _CoOptimizer, best: List[Optional[DesignRecord]]
) -> Callable[[DesignRecord], bool]:
    def on_evaluated(record: DesignRecord) -> bool:
        if best[0] is None or record.objective > best[0].objective:
            best[0] = record
            run.emit(RunEvent.NEW_BEST, record)
        return True

    return on_evaluated


def run_single_phase(
    config: ScheduleConfig,
    env: Optional[LocomotionEnvironment] = None,
    on_row: Optional[RowSink] = None,
    executor: Optional[Executor] = None,
) -> RunLog:
    """
    Co-optimizes until the budget runs out; every design gets a controller trained from
    scratch under the (possibly reduced) training budget.

    Args:
        config (ScheduleConfig): The arm to run.
        env (Optional[LocomotionEnvironment]): Environment, the built-in one by default.
        on_row (Optional[RowSink]): Called with each row as soon as it is logged.

    Returns:
        RunLog: All evaluations, every new best and the final best design.
    """
    run = _CoOptimizer(config, env, on_row, executor)
    best: List[Optional[DesignRecord]] = [None]
    run.co_optimize(config.max_steps, _track_best(run, best))
    record = best[0]
    if record is None:
        return run.finish(None, None, None)
    return run.finish(record, record.training, record.budget)


def run_retrain_end(
    config: ScheduleConfig,
    env: Optional[LocomotionEnvironment] = None,
    on_row: Optional[RowSink] = None,
    executor: Optional[Executor] = None,
) -> RunLog:
    """
    Co-optimizes with the reduced budget, stopping early enough that the best design
    can then be locked and its controller retrained from scratch with retrain_budget.

    When the whole budget is smaller than one retraining, co-optimization is skipped
    and a random design is retrained with whatever steps there are.
    """
    run = _CoOptimizer(config, env, on_row, executor)
    reserve = retrain_reserve(config)
    best: List[Optional[DesignRecord]] = [None]
    if config.max_steps < reserve:
        logger.warning(
            "budget of %d steps is below one retraining (%d), retraining a random design",
            config.max_steps,
            reserve,
        )
        genome = random_genome(run.streams.stream("design-init"), config.size_bias)
        unevaluated = TrainingResult(
            controller=ControllerParams(values=[0.0] * complexity(genome)),
            objective=-math.inf,
            steps_used=0,
            episodes_run=0,
        )
        best[0] = DesignRecord(
            index=0, genome=genome, training=unevaluated, budget=config.training_budget
        )
        run.next_index = 1
        run.emit(RunEvent.NEW_BEST, best[0], budget=config.retrain_budget)
    else:
        run.co_optimize(config.max_steps - reserve, _track_best(run, best))
    record = best[0]
    if record is None:
        return run.finish(None, None, None)
    logger.info(
        "phase 1 done at %d steps, retraining design %d",
        run.ledger.used_steps,
        record.index,
    )
    retrained = run.retrain(record)
    run.emit(RunEvent.RETRAIN, record, retrained, config.retrain_budget)
    return run.finish(record, retrained, config.retrain_budget)


def run_retrain_every_new_best(
    config: ScheduleConfig,
    env: Optional[LocomotionEnvironment] = None,
    on_row: Optional[RowSink] = None,
    executor: Optional[Executor] = None,
) -> RunLog:
    """
    Co-optimizes with the reduced budget and retrains, with retrain_budget, every design
    whose reduced score beats the incumbent's retrained score. The retrained design
    becomes the incumbent only if its retrained score is higher.

    The run stops when the steps left cannot pay for a triggered retraining.
    """
    run = _CoOptimizer(config, env, on_row, executor)
    retrain_cost = retrain_reserve(config)
    incumbent: List[Optional[Tuple[DesignRecord, TrainingResult]]] = [None]

    def on_evaluated(record: DesignRecord) -> bool:
        current = incumbent[0]
        if current is not None and not record.objective > current[1].objective:
            return True
        run.emit(RunEvent.NEW_BEST, record)
        if run.ledger.remaining < retrain_cost:
            logger.info("not enough steps left to retrain design %d, stopping", record.index)
            return False
        retrained = run.retrain(record)
        run.emit(RunEvent.RETRAIN, record, retrained, config.retrain_budget)
        if current is None or retrained.objective > current[1].objective:
            incumbent[0] = (record, retrained)
        return True

    run.co_optimize(config.max_steps, on_evaluated)
    if incumbent[0] is None:
        return run.finish(None, None, None)
    record, retrained = incumbent[0]
    return run.finish(record, retrained, config.retrain_budget)


_SCHEDULES = {
    ScheduleKind.SINGLE_PHASE: run_single_phase,
    ScheduleKind.RETRAIN_END: run_retrain_end,
    ScheduleKind.RETRAIN_EVERY_NEW_BEST: run_retrain_every_new_best,
}


def run_schedule(
    config: ScheduleConfig,
    env: Optional[LocomotionEnvironment] = None,
    on_row: Optional[RowSink] = None,
    executor: Optional[Executor] = None,
) -> RunLog:
    return _SCHEDULES[config.schedule](config, env, on_row, executor)


def retrain_payload(
    payload: DesignPayload,
    budget: TrainingBudget,
    rng: np.random.Generator,
    algorithm: ControllerAlgorithm,
    env: Optional[LocomotionEnvironment] = None,
) -> TrainingResult:
    return train_controller(payload.genome, budget, rng, algorithm, env)


def improvement_probability(
    logs: Sequence[RunLog],
    retrain_budget: TrainingBudget,
    checkpoints: Optional[Sequence[int]] = None,
    algorithm: ControllerAlgorithm = ControllerAlgorithm.CMAES,
    env: Optional[LocomotionEnvironment] = None,
) -> List[Tuple[int, float]]:
    """
    Probability that a newly found best design is really better than every earlier best
    once all of them get a properly trained controller.

    Every new_best design of every log is retrained once with retrain_budget on a fresh
    stream derived from the log's master seed. At each checkpoint, each log contributes
    whether its latest new best (at or before the checkpoint) beat all earlier ones.

    Args:
        logs (Sequence[RunLog]): Single-phase logs with new_best payloads.
        retrain_budget (TrainingBudget): Resources for the retraining.
        checkpoints (Optional[Sequence[int]]): Step counts; defaults to the event steps.

    Returns:
        List[Tuple[int, float]]: (steps, probability) for checkpoints with data.
    """
    if not logs:
        return []
    env = env or LocomotionEnvironment()
    per_log: List[List[Tuple[int, bool]]] = []
    for log in logs:
        streams = RngStreams(log.master_seed)
        retrained: Dict[str, float] = {}
        best_prior = -math.inf
        outcomes: List[Tuple[int, bool]] = []
        for k, row in enumerate(log.by_event(RunEvent.NEW_BEST)):
            if row.genome_id not in retrained:
                payload = from_payload(row.payload)
                result = retrain_payload(
                    payload,
                    retrain_budget,
                    streams.stream("improvement", payload.design_index),
                    algorithm,
                    env,
                )
                retrained[row.genome_id] = result.objective
            objective = retrained[row.genome_id]
            outcomes.append((row.used_steps, k == 0 or objective > best_prior))
            best_prior = max(best_prior, objective)
        per_log.append(outcomes)

    if checkpoints is None:
        checkpoints = sorted({steps for outcomes in per_log for steps, _ in outcomes})
    curve = []
    for t in checkpoints:
        wins = []
        for outcomes in per_log:
            latest = [won for steps, won in outcomes if steps <= t]
            if latest:
                wins.append(latest[-1])
        if wins:
            curve.append((int(t), sum(wins) / len(wins)))
    return curve


def retrain_end_curve(
    log: RunLog,
    config: ScheduleConfig,
    checkpoints: Sequence[int],
    env: Optional[LocomotionEnvironment] = None,
) -> List[float]:
    """
    Objective a retrain-end run would report if its budget were each checkpoint.

    Co-optimization is deterministic, so a retrain-end run stopped at t locks the best
    design found within t minus the retraining reserve of this log's first phase.
    That design is retrained (once, cached) on the run's first retraining stream,
    the one its own final retraining used.
    Checkpoints without a design yet are NaN.
    """
    env = env or LocomotionEnvironment()
    reserve = retrain_reserve(config)
    streams = RngStreams(log.master_seed)
    incumbents = [
        row for row in log.by_event(RunEvent.NEW_BEST) if math.isfinite(row.objective)
    ]
    retrained: Dict[str, float] = {}
    values = []
    for t in checkpoints:
        eligible = [row for row in incumbents if row.used_steps <= t - reserve]
        if not eligible:
            values.append(math.nan)
            continue
        row = eligible[-1]
        if row.genome_id not in retrained:
            payload = from_payload(row.payload)
            retrained[row.genome_id] = retrain_payload(
                payload,
                config.retrain_budget,
                streams.stream("retrain", 0),
                config.controller_algorithm,
                env,
            ).objective
        values.append(retrained[row.genome_id])
    return values


class CheatingReport(BaseModel):
    objective: float
    rear_advance: float
    flagged: bool


def detect_cheating(
    genome: MorphologyGenome,
    controller: Sequence[float],
    episode_steps: int,
    env: Optional[LocomotionEnvironment] = None,
) -> CheatingReport:
    """
    Flags a design whose score does not come from walking: its center of mass moved
    right but its rearmost node advanced less than a tenth of that, i.e. the robot
    stretched, fell or leaned forward instead of travelling.
    """
    env = env or LocomotionEnvironment()
    trajectory = env.trajectory(genome, list(controller), episode_steps)
    rear_advance = float(
        np.min(trajectory.frames[-1][:, 0]) - np.min(trajectory.frames[0][:, 0])
    )
    objective = trajectory.result.objective
    flagged = (
        math.isfinite(objective)
        and objective > 0
        and rear_advance < CHEATING_REAR_SHARE * objective
    )
    return CheatingReport(objective=objective, rear_advance=rear_advance, flagged=flagged)
