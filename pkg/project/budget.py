import logging
import math
from enum import Enum

from project.controller import TrainingBudget
from pydantic import BaseModel, Field, model_validator

logger = logging.getLogger(__name__)

# the stopping criterion used for full-size experiments
DEFAULT_MAX_STEPS = 8_000_000


class BudgetCategory(str, Enum):
    PHASE1 = "phase1"
    RETRAIN = "retrain"


class ReductionConfig(BaseModel):
    """
    Reduced quantity scales the episodes per design, reduced length the steps per
    episode; both against the unreduced bases.
    """

    reduced_quantity: float = Field(default=1.0, gt=0, le=1)
    reduced_length: float = Field(default=1.0, gt=0, le=1)
    base_episodes: int = Field(default=64, ge=1)
    base_episode_steps: int = Field(default=500, ge=1)

    def base_budget(self) -> TrainingBudget:
        return TrainingBudget(
            episodes=self.base_episodes, episode_steps=self.base_episode_steps
        )


class BudgetLedger(BaseModel):
    """
    Monotone step counter for a whole run. used_steps never exceeds max_steps; a charge
    that would overshoot is truncated and marks the ledger exhausted.
    """

    max_steps: int = Field(default=DEFAULT_MAX_STEPS, ge=0)
    phase1_steps: int = 0
    retrain_steps: int = 0
    exhausted: bool = False

    @model_validator(mode="after")
    def check_totals(self) -> "BudgetLedger":
        if self.used_steps > self.max_steps:
            raise ValueError("used steps exceed the budget")
        return self

    @property
    def used_steps(self) -> int:
        return self.phase1_steps + self.retrain_steps

    @property
    def remaining(self) -> int:
        return self.max_steps - self.used_steps


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def effective_budget(config: ReductionConfig) -> TrainingBudget:
    """
    Training budget after applying both reduction factors, rounded half up with a floor of 1.

    Args:
        config (ReductionConfig): Reduction factors and the unreduced bases.

    Returns:
        TrainingBudget: Episodes and steps per episode for one design.
    """
    return TrainingBudget(
        episodes=max(1, _round_half_up(config.base_episodes * config.reduced_quantity)),
        episode_steps=max(
            1, _round_half_up(config.base_episode_steps * config.reduced_length)
        ),
    )


def charge(ledger: BudgetLedger, steps: int, category: BudgetCategory) -> BudgetLedger:
    """
    Books simulated steps against the ledger.

    Args:
        ledger (BudgetLedger): Updated in place and returned.
        steps (int): Steps to book, >= 0.
        category (BudgetCategory): phase1 or retrain.

    Returns:
        BudgetLedger: The ledger; exhausted is set once it reaches max_steps. A charge
        past the budget is truncated to what is left.
    """
    if steps < 0:
        raise ValueError("cannot charge a negative number of steps")
    category = BudgetCategory(category)
    granted = min(steps, ledger.remaining)
    if granted < steps:
        logger.info(
            "budget exhausted: %d of %d %s steps booked", granted, steps, category.value
        )
    if category == BudgetCategory.PHASE1:
        ledger.phase1_steps += granted
    else:
        ledger.retrain_steps += granted
    if granted < steps or (steps > 0 and ledger.remaining == 0):
        ledger.exhausted = True
    return ledger
