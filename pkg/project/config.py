import logging
import re
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from project.analysis import DEFAULT_CONFIDENCE, DEFAULT_RESAMPLES, default_checkpoints
from project.budget import DEFAULT_MAX_STEPS, ReductionConfig
from project.controller import ControllerAlgorithm, TrainingBudget
from project.engine import ScheduleConfig, ScheduleKind
from project.errors import ConfigError
from project.genome import DEFAULT_SIZE_BIAS
from project.optimizers import EsConfig
from project.physics import DEFAULT_DT, LocomotionEnvironment
from pydantic import BaseModel, Field, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_REPETITIONS = 60
MANIFEST_NAME = "experiment.json"

_INT = re.compile(r"^[+-]?\d[\d_]*$")
_FLOAT = re.compile(r"^[+-]?(\d[\d_]*\.?\d*|\.\d+)([eE][+-]?\d+)?$")
_NAME = re.compile(r"^[A-Za-z][A-Za-z0-9_]*$")


class ArmConfig(BaseModel):
    """
    One named arm of an experiment. Budget fields left unset fall back to the
    experiment-wide bases.
    """

    kind: ScheduleKind = ScheduleKind.SINGLE_PHASE
    reduced_quantity: float = Field(default=1.0, gt=0, le=1)
    reduced_length: float = Field(default=1.0, gt=0, le=1)
    base_episodes: Optional[int] = Field(default=None, ge=1)
    base_episode_steps: Optional[int] = Field(default=None, ge=1)
    retrain_episodes: Optional[int] = Field(default=None, ge=1)
    retrain_episode_steps: Optional[int] = Field(default=None, ge=1)
    design_mu: int = Field(default=8, ge=1)
    design_lambda: int = Field(default=16, ge=1)
    design_elitist: bool = True
    size_bias: float = Field(default=DEFAULT_SIZE_BIAS, ge=0, le=1)


class ExperimentConfig(BaseModel):
    """
    A set of named arms, each run for a number of repetitions (master seeds
    0..repetitions-1, shifted by the seed offset).
    """

    max_steps: int = Field(default=DEFAULT_MAX_STEPS, ge=1)
    repetitions: int = Field(default=DEFAULT_REPETITIONS, ge=1)
    base_episodes: int = Field(default=64, ge=1)
    base_episode_steps: int = Field(default=500, ge=1)
    dt: float = Field(default=DEFAULT_DT, gt=0)
    controller_algorithm: ControllerAlgorithm = ControllerAlgorithm.CMAES
    checkpoints: int = Field(default=64, ge=1)
    bootstrap_resamples: int = Field(default=DEFAULT_RESAMPLES, ge=1)
    confidence: float = Field(default=DEFAULT_CONFIDENCE, gt=0, lt=1)
    seed_offset: int = Field(default=0, ge=0)
    output_dir: Optional[str] = None
    arms: Dict[str, ArmConfig] = Field(default_factory=dict)

    def environment(self) -> LocomotionEnvironment:
        return LocomotionEnvironment(dt=self.dt)

    def checkpoint_grid(self):
        return default_checkpoints(self.max_steps, self.checkpoints)

    def seeds(self) -> range:
        return range(self.seed_offset, self.seed_offset + self.repetitions)

    def schedule_config(self, arm_name: str, seed: int) -> ScheduleConfig:
        arm = self.arms[arm_name]
        reduction = ReductionConfig(
            reduced_quantity=arm.reduced_quantity,
            reduced_length=arm.reduced_length,
            base_episodes=arm.base_episodes or self.base_episodes,
            base_episode_steps=arm.base_episode_steps or self.base_episode_steps,
        )
        return ScheduleConfig(
            schedule=arm.kind,
            reduction=reduction,
            retrain_budget=TrainingBudget(
                episodes=arm.retrain_episodes or reduction.base_episodes,
                episode_steps=arm.retrain_episode_steps or reduction.base_episode_steps,
            ),
            design_algo=EsConfig(
                mu=arm.design_mu, lambda_=arm.design_lambda, elitist=arm.design_elitist
            ),
            controller_algorithm=self.controller_algorithm,
            max_steps=self.max_steps,
            master_seed=seed,
            size_bias=arm.size_bias,
        )


def parse_value(text: str) -> Union[bool, int, float, str]:
    lowered = text.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    if _INT.match(text):
        return int(text.replace("_", ""))
    if _FLOAT.match(text):
        return float(text.replace("_", ""))
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    return text


def _assign(
    tree: Dict[str, Any], key: str, value: Any, line: int
) -> None:
    parts = key.split(".")
    if parts[0] == "experiment" and len(parts) == 2:
        if parts[1] == "arms" or parts[1] not in ExperimentConfig.model_fields:
            raise ConfigError("unknown experiment setting", line, key)
        tree[parts[1]] = value
    elif parts[0] == "schedule" and len(parts) == 3:
        arm, field = parts[1], parts[2]
        if not _NAME.match(arm):
            raise ConfigError("arm names must be identifiers", line, key)
        if field not in ArmConfig.model_fields:
            raise ConfigError("unknown schedule setting", line, key)
        tree.setdefault("arms", {}).setdefault(arm, {})[field] = value
    else:
        raise ConfigError(
            "keys must look like experiment.<field> or schedule.<arm>.<field>", line, key
        )


def parse_config_text(text: str) -> ExperimentConfig:
    """
    Parses the flat dotted-key format: one 'key = value' per line, '#' comments.

    Args:
        text (str): The whole config file.

    Returns:
        ExperimentConfig: The validated configuration.

    Raises:
        ConfigError: With the line and key of the first problem found.
    """
    tree: Dict[str, Any] = {}
    lines: Dict[Tuple[str, ...], int] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise ConfigError("expected 'key = value'", number)
        key, _, value = (part.strip() for part in content.partition("="))
        if not key or not value:
            raise ConfigError("empty key or value", number, key or None)
        _assign(tree, key, parse_value(value), number)
        parts = key.split(".")
        path = ("arms", parts[1], parts[2]) if parts[0] == "schedule" else (parts[1],)
        lines[path] = number
    try:
        return ExperimentConfig.model_validate(tree)
    except ValidationError as e:
        error = e.errors()[0]
        loc = tuple(str(p) for p in error["loc"])
        line = lines.get(loc)
        key = None
        if loc and loc[0] == "arms" and len(loc) >= 3:
            key = f"schedule.{loc[1]}.{loc[2]}"
        elif loc:
            key = f"experiment.{loc[0]}"
        raise ConfigError(error["msg"], line, key) from e


def load_config(path: Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    config = parse_config_text(text)
    logger.info("loaded %d arms from %s", len(config.arms), path)
    return config


def write_manifest(config: ExperimentConfig, out_dir: Path) -> Path:
    path = Path(out_dir) / MANIFEST_NAME
    path.write_text(config.model_dump_json(indent=2) + "\n")
    return path


def read_manifest(out_dir: Path) -> ExperimentConfig:
    path = Path(out_dir) / MANIFEST_NAME
    if not path.exists():
        raise ConfigError(f"{path} not found; run 'morphx run' into this directory first")
    return ExperimentConfig.model_validate_json(path.read_text())
