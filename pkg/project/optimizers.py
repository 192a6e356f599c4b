import logging
import math
from functools import lru_cache
from typing import Callable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
from project.errors import ContractViolationError
from pydantic import BaseModel, ConfigDict, Field, model_validator

logger = logging.getLogger(__name__)

EIGEN_FLOOR = 1e-14

T = TypeVar("T")


class EsConfig(BaseModel):
    """
    Evolution strategy settings. elitist=True is (mu + lambda), False is (mu, lambda).
    """

    mu: int = Field(default=8, ge=1)
    lambda_: int = Field(default=16, ge=1, alias="lambda")
    elitist: bool = True
    step_size: float = Field(default=0.1, gt=0)

    model_config = ConfigDict(populate_by_name=True)

    @model_validator(mode="after")
    def check_sizes(self) -> "EsConfig":
        if self.mu > self.lambda_:
            raise ValueError(f"mu ({self.mu}) must not exceed lambda ({self.lambda_})")
        return self


class CmaParameters(BaseModel):
    """
    Static strategy parameters, the canonical tutorial defaults for a dimension and
    population size.
    """

    dimension: int
    lam: int
    mu: int
    weights: Tuple[float, ...]
    mueff: float
    cc: float
    cs: float
    c1: float
    cmu: float
    damps: float


def default_population_size(dimension: int) -> int:
    return 4 + int(3 * math.log(max(dimension, 1)))


@lru_cache(maxsize=None)
def cma_parameters(dimension: int, lam: Optional[int] = None) -> CmaParameters:
    n = dimension
    lam = lam or default_population_size(n)
    mu = lam // 2
    raw = [math.log(lam / 2 + 0.5) - math.log(i + 1) for i in range(mu)]
    total = sum(raw)
    weights = tuple(w / total for w in raw)
    mueff = sum(weights) ** 2 / sum(w * w for w in weights)
    cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
    cs = (mueff + 2) / (n + mueff + 5)
    c1 = 2 / ((n + 1.3) ** 2 + mueff)
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
    damps = 2 * mueff / lam + 0.3 + cs
    return CmaParameters(
        dimension=n,
        lam=lam,
        mu=mu,
        weights=weights,
        mueff=mueff,
        cc=cc,
        cs=cs,
        c1=c1,
        cmu=cmu,
        damps=damps,
    )


class CmaState(BaseModel):
    """
    Search distribution of CMA-ES: mean, global step size, covariance and the two
    evolution paths.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    mean: np.ndarray
    sigma: float = Field(gt=0)
    covariance: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    generation: int = 0
    population_size: int
    repairs: int = 0

    @property
    def dimension(self) -> int:
        return int(self.mean.size)

    @property
    def parameters(self) -> CmaParameters:
        return cma_parameters(self.dimension, self.population_size)


def new_cma_state(
    mean: Sequence[float], sigma: float, population_size: Optional[int] = None
) -> CmaState:
    m = np.asarray(mean, dtype=float).copy()
    if m.size == 0:
        raise ContractViolationError("CMA-ES needs at least one dimension")
    n = m.size
    return CmaState(
        mean=m,
        sigma=sigma,
        covariance=np.eye(n),
        p_sigma=np.zeros(n),
        p_c=np.zeros(n),
        population_size=population_size or default_population_size(n),
    )


def _eigensystem(covariance: np.ndarray) -> Tuple[np.ndarray, np.ndarray, bool]:
    eigenvalues, basis = np.linalg.eigh(covariance)
    repaired = bool(np.min(eigenvalues) < EIGEN_FLOOR)
    if repaired:
        eigenvalues = np.maximum(eigenvalues, EIGEN_FLOOR)
    return eigenvalues, basis, repaired


def cma_ask(state: CmaState, rng: np.random.Generator) -> List[np.ndarray]:
    """
    Samples population_size candidates from N(mean, sigma^2 C). The state is not modified.
    """
    eigenvalues, basis, repaired = _eigensystem(state.covariance)
    if repaired:
        logger.warning(
            "covariance not positive definite at generation %d, eigenvalues floored at %g",
            state.generation,
            EIGEN_FLOOR,
        )
    z = rng.standard_normal((state.population_size, state.dimension))
    y = (z * np.sqrt(eigenvalues)) @ basis.T
    return [state.mean + state.sigma * y[k] for k in range(state.population_size)]


def cma_tell(
    state: CmaState,
    candidates: Sequence[Sequence[float]],
    fitnesses: Sequence[float],
) -> CmaState:
    """
    Rank-one and rank-mu update of the search distribution. Fitness is maximized.

    Only ranks enter the update, so adding a constant to every fitness leaves the
    result unchanged. When every candidate scores -inf the mean stays put and sigma
    doubles; when all scores tie the distribution is left as it was.

    Args:
        state (CmaState): Distribution the candidates were sampled from.
        candidates: The population_size sampled vectors.
        fitnesses: Their scores, finite or -inf.

    Returns:
        CmaState: The updated distribution, generation incremented.
    """
    par = state.parameters
    f = np.asarray(fitnesses, dtype=float)
    if len(candidates) != par.lam or f.size != par.lam:
        raise ContractViolationError(
            f"expected {par.lam} candidates and fitnesses, "
            f"got {len(candidates)} and {f.size}"
        )
    if np.any(np.isnan(f)) or np.any(f == math.inf):
        raise ContractViolationError("fitnesses must be finite or -inf")

    generation = state.generation + 1
    if np.all(f == -math.inf):
        logger.debug("all candidates failed, widening sigma to %g", state.sigma * 2)
        return state.model_copy(update={"sigma": state.sigma * 2, "generation": generation})
    if np.all(f == f[0]):
        return state.model_copy(update={"generation": generation})

    n = state.dimension
    order = np.argsort(-f, kind="stable")
    x = np.asarray(candidates, dtype=float)[order[: par.mu]]
    w = np.asarray(par.weights)
    old = state.mean
    y = (x - old) / state.sigma
    y_w = w @ y
    mean = old + state.sigma * y_w

    eigenvalues, basis, repaired = _eigensystem(state.covariance)
    inv_sqrt = basis @ np.diag(1.0 / np.sqrt(eigenvalues)) @ basis.T
    p_sigma = (1 - par.cs) * state.p_sigma + math.sqrt(
        par.cs * (2 - par.cs) * par.mueff
    ) * (inv_sqrt @ y_w)
    norm_sq = float(p_sigma @ p_sigma)
    hsig = float(
        norm_sq / n / (1 - (1 - par.cs) ** (2 * generation)) < 2 + 4.0 / (n + 1)
    )
    p_c = (1 - par.cc) * state.p_c + hsig * math.sqrt(
        par.cc * (2 - par.cc) * par.mueff
    ) * y_w

    c1a = par.c1 * (1 - (1 - hsig**2) * par.cc * (2 - par.cc))
    rank_mu = (y * w[:, None]).T @ y
    covariance = (
        (1 - c1a - par.cmu) * state.covariance
        + par.c1 * np.outer(p_c, p_c)
        + par.cmu * rank_mu
    )
    covariance = (covariance + covariance.T) / 2

    sigma = state.sigma * math.exp(min(1.0, par.cs / par.damps * (norm_sq / n - 1) / 2))
    return state.model_copy(
        update={
            "mean": mean,
            "sigma": sigma,
            "covariance": covariance,
            "p_sigma": p_sigma,
            "p_c": p_c,
            "generation": generation,
            "repairs": state.repairs + int(repaired),
        }
    )


def rank_order(fitnesses: Sequence[float]) -> List[int]:
    """
    Indices sorted best first; ties keep the lower (older) index first.
    """
    return sorted(range(len(fitnesses)), key=lambda i: -fitnesses[i])


def es_step(
    population: Sequence[T],
    fitnesses: Sequence[float],
    config: EsConfig,
    mutate_fn: Callable[[T, np.random.Generator], T],
    rng: np.random.Generator,
) -> List[T]:
    """
    One generation of a (mu + lambda) or (mu, lambda) evolution strategy.

    The mu best individuals are selected and lambda children are produced from them
    round-robin, best parent first. The returned population is the selected parents
    followed by the children for the elitist variant, and the children alone otherwise.
    """
    if len(population) != len(fitnesses):
        raise ContractViolationError("population and fitnesses differ in length")
    if len(population) < config.mu:
        raise ContractViolationError(
            f"population of {len(population)} is smaller than mu={config.mu}"
        )
    selected = rank_order(fitnesses)[: config.mu]
    children = [
        mutate_fn(population[selected[k % config.mu]], rng)
        for k in range(config.lambda_)
    ]
    parents = [population[i] for i in selected] if config.elitist else []
    return parents + children


def gaussian_mutation(
    step_size: float,
) -> Callable[[np.ndarray, np.random.Generator], np.ndarray]:
    def mutate_vector(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return np.asarray(x, dtype=float) + step_size * rng.standard_normal(np.shape(x))

    return mutate_vector
