from typing import List

from project.errors import ContractViolationError
from project.physics import DEFAULT_DT, LocomotionEnvironment, MorphologyGraph, control_dim
from pydantic import BaseModel


class SimulateEpisodeResponse(BaseModel):
    """
    Score of one episode with a given design and controller.
    """

    objective: float
    steps_consumed: int
    diverged: bool
    complexity: int


async def simulateEpisode(
    genome: MorphologyGraph,
    controller: List[float],
    episode_steps: int,
    dt: float = DEFAULT_DT,
) -> SimulateEpisodeResponse:
    """
    Runs the built-in locomotion environment for one episode.

    Args:
        genome (MorphologyGraph): Nodes and springs of the robot.
        controller (List[float]): Amplitude, phase and offset per actuated spring.
        episode_steps (int): Number of integration steps.
        dt (float): Integration step in seconds.

    Returns:
        SimulateEpisodeResponse: Rightward center-of-mass displacement and step usage.
    """
    if len(controller) != control_dim(genome):
        raise ContractViolationError(
            f"controller has {len(controller)} values, the design needs {control_dim(genome)}"
        )
    result = LocomotionEnvironment(dt=dt).simulate(genome, controller, episode_steps)
    return SimulateEpisodeResponse(
        objective=result.objective,
        steps_consumed=result.steps_consumed,
        diverged=result.diverged,
        complexity=control_dim(genome),
    )
