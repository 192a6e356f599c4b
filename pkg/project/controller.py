import functools
import logging
import math
from concurrent.futures import Executor
from enum import Enum
from typing import Callable, List, Optional, Sequence

import numpy as np
from project.errors import ContractViolationError
from project.optimizers import (
    EsConfig,
    cma_ask,
    cma_tell,
    default_population_size,
    es_step,
    gaussian_mutation,
    new_cma_state,
)
from project.physics import (
    AMPLITUDE_LIMIT,
    OFFSET_LIMIT,
    PARAMS_PER_ACTUATOR,
    EpisodeResult,
    LocomotionEnvironment,
    MorphologyGraph,
    clamp_controller,
    control_dim,
)
from pydantic import BaseModel, Field

logger = logging.getLogger(__name__)

# the optimizer searches [-1, 1] per coordinate; these scale it onto the actuator box
HALF_WIDTHS = np.array([AMPLITUDE_LIMIT, math.pi, OFFSET_LIMIT])
# 0.3 of the box width (2) in the normalized space
INITIAL_SIGMA = 0.6
ES_STEP_SIZE = 0.2

ObjectiveFn = Callable[[np.ndarray, int], EpisodeResult]


class ControllerAlgorithm(str, Enum):
    CMAES = "cmaes"
    MU_COMMA_LAMBDA = "mu_comma_lambda"


class ControllerParams(BaseModel):
    """
    Flat open-loop controller: (amplitude, phase, offset) for every actuated edge,
    in edge order.
    """

    values: List[float] = Field(default_factory=list)

    def __len__(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


class TrainingBudget(BaseModel):
    """
    Resources for training one controller: episodes and steps per episode.
    """

    episodes: int = Field(ge=1)
    episode_steps: int = Field(ge=1)

    @property
    def steps(self) -> int:
        return self.episodes * self.episode_steps


class TrainingResult(BaseModel):
    """
    Best controller found, its recorded objective and what training cost.

    completed is False when a step limit cut training short; the objective then only
    covers the episodes that ran in full.
    """

    controller: ControllerParams
    objective: float
    steps_used: int
    episodes_run: int
    completed: bool = True


def decode_actuators(u: np.ndarray) -> np.ndarray:
    """
    Maps the optimizer's normalized vector onto the clamped actuator parameter box.
    """
    if u.size == 0:
        return np.zeros(0)
    scaled = u.reshape(-1, PARAMS_PER_ACTUATOR) * HALF_WIDTHS
    return clamp_controller(scaled).reshape(-1)


class _EpisodeRunner:
    """
    Evaluates candidates in order against an optional step limit and keeps the best.
    """

    def __init__(
        self,
        objective_fn: ObjectiveFn,
        decode: Callable[[np.ndarray], np.ndarray],
        episode_steps: int,
        step_limit: Optional[int],
        executor: Optional[Executor],
    ):
        self.objective_fn = objective_fn
        self.decode = decode
        self.episode_steps = episode_steps
        self.remaining = step_limit
        self.executor = executor
        self.steps_used = 0
        self.episodes_run = 0
        self.truncated = False
        self.best_objective = -math.inf
        self.best_params: Optional[np.ndarray] = None

    def _lengths(self, count: int) -> List[int]:
        lengths = []
        remaining = self.remaining
        for _ in range(count):
            if remaining is None:
                lengths.append(self.episode_steps)
                continue
            length = min(self.episode_steps, remaining)
            if length <= 0:
                break
            lengths.append(length)
            remaining -= length
        return lengths

    def evaluate(self, candidates: Sequence[np.ndarray]) -> Optional[List[float]]:
        """
        Returns one fitness per candidate, or None once the step limit was hit.
        """
        if self.truncated:
            return None
        lengths = self._lengths(len(candidates))
        params = [self.decode(np.asarray(c, dtype=float)) for c in candidates[: len(lengths)]]
        if self.executor is not None:
            results = list(self.executor.map(self.objective_fn, params, lengths))
        else:
            results = [self.objective_fn(p, n) for p, n in zip(params, lengths)]
        fitnesses = []
        for p, n, result in zip(params, lengths, results):
            self.steps_used += result.steps_consumed
            if self.remaining is not None:
                self.remaining -= result.steps_consumed
            if n < self.episode_steps:
                self.truncated = True
                continue
            self.episodes_run += 1
            fitnesses.append(result.objective)
            if self.best_params is None or result.objective > self.best_objective:
                self.best_objective = result.objective
                self.best_params = p
        if len(lengths) < len(candidates) or self.truncated:
            self.truncated = True
            return None
        return fitnesses

    def result(self, dim: int) -> TrainingResult:
        best = self.best_params if self.best_params is not None else np.zeros(dim)
        return TrainingResult(
            controller=ControllerParams(values=[float(v) for v in best]),
            objective=self.best_objective,
            steps_used=self.steps_used,
            episodes_run=self.episodes_run,
            completed=not self.truncated,
        )


def optimize_controller(
    dim: int,
    budget: TrainingBudget,
    rng: np.random.Generator,
    algorithm: ControllerAlgorithm,
    objective_fn: ObjectiveFn,
    decode: Callable[[np.ndarray], np.ndarray] = lambda u: u,
    step_limit: Optional[int] = None,
    executor: Optional[Executor] = None,
    es_config: Optional[EsConfig] = None,
) -> TrainingResult:
    """
    Maximizes objective_fn over a dim-dimensional normalized box with a fixed number
    of episodes.

    Args:
        dim (int): Number of parameters (0 means a passive design).
        budget (TrainingBudget): Episodes and steps per episode.
        rng (np.random.Generator): The training stream.
        algorithm (ControllerAlgorithm): cmaes or mu_comma_lambda.
        objective_fn (ObjectiveFn): Scores a decoded vector over an episode length.
        decode: Maps normalized vectors to the values objective_fn receives.
        step_limit (Optional[int]): Never simulate more than this many steps.
        executor (Optional[Executor]): Evaluate a generation's candidates in parallel;
            results are merged in candidate order.

    Returns:
        TrainingResult: The best decoded vector and the cost of finding it.
    """
    runner = _EpisodeRunner(objective_fn, decode, budget.episode_steps, step_limit, executor)
    if dim == 0:
        runner.evaluate([np.zeros(0)])
        return runner.result(dim)

    lam = default_population_size(dim)
    if budget.episodes < lam:
        logger.debug(
            "%d episodes below population size %d, using random search",
            budget.episodes,
            lam,
        )
        runner.evaluate(list(rng.uniform(-1.0, 1.0, size=(budget.episodes, dim))))
        return runner.result(dim)

    generations = budget.episodes // lam
    if algorithm == ControllerAlgorithm.CMAES:
        state = new_cma_state(np.zeros(dim), INITIAL_SIGMA, lam)
        for _ in range(generations):
            candidates = cma_ask(state, rng)
            fitnesses = runner.evaluate(candidates)
            if fitnesses is None:
                break
            state = cma_tell(state, candidates, fitnesses)
    elif algorithm == ControllerAlgorithm.MU_COMMA_LAMBDA:
        config = es_config or EsConfig(
            mu=max(1, lam // 2), lambda_=lam, elitist=False, step_size=ES_STEP_SIZE
        )
        mutate = gaussian_mutation(config.step_size)
        population = list(rng.uniform(-1.0, 1.0, size=(config.lambda_, dim)))
        fitnesses = runner.evaluate(population)
        for _ in range(generations - 1):
            if fitnesses is None:
                break
            population = es_step(population, fitnesses, config, mutate, rng)
            fitnesses = runner.evaluate(population)
    else:
        raise ContractViolationError(f"unknown controller algorithm {algorithm!r}")
    return runner.result(dim)


def _run_episode(
    env: LocomotionEnvironment,
    genome: MorphologyGraph,
    values: np.ndarray,
    steps: int,
) -> EpisodeResult:
    return env.simulate(genome, values, steps)


def train_controller(
    genome: MorphologyGraph,
    budget: TrainingBudget,
    rng: np.random.Generator,
    algorithm: ControllerAlgorithm = ControllerAlgorithm.CMAES,
    env: Optional[LocomotionEnvironment] = None,
    step_limit: Optional[int] = None,
    executor: Optional[Executor] = None,
) -> TrainingResult:
    """
    Trains a controller for a fixed design from scratch and scores the design with it.

    The best controller's recorded score is returned as is; dynamics are deterministic,
    so it is not simulated again.
    """
    env = env or LocomotionEnvironment()
    dim = control_dim(genome)
    result = optimize_controller(
        dim,
        budget,
        rng,
        ControllerAlgorithm(algorithm),
        # module-level so a process pool can pickle it
        functools.partial(_run_episode, env, genome),
        decode=decode_actuators,
        step_limit=step_limit,
        executor=executor,
    )
    logger.debug(
        "trained controller: dim=%d episodes=%d steps=%d objective=%g",
        dim,
        result.episodes_run,
        result.steps_used,
        result.objective,
    )
    return result

