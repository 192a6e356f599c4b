from typing import Any, List

import numpy as np
import pytest
from project.genome import MorphologyGenome
from project.physics import Edge, EpisodeResult, LocomotionEnvironment, Node
from pydantic import PrivateAttr


def chain_genome(n_nodes: int, actuated: int = 0, spacing: float = 0.3) -> MorphologyGenome:
    """
    Nodes on the ground in a row, consecutive ones linked; the first `actuated`
    springs are actuated.
    """
    nodes = [Node(x=i * spacing, y=0.0, mass=1.0) for i in range(n_nodes)]
    edges = [
        Edge(a=i, b=i + 1, rest_length=spacing, stiffness=500.0, actuated=i < actuated)
        for i in range(n_nodes - 1)
    ]
    return MorphologyGenome(genome_id=f"chain-{n_nodes}-{actuated}", nodes=nodes, edges=edges)


def symmetric_triangle(actuated: bool = True) -> MorphologyGenome:
    nodes = [
        Node(x=-0.2, y=0.0, mass=1.0),
        Node(x=0.2, y=0.0, mass=1.0),
        Node(x=0.0, y=0.3, mass=1.0),
    ]
    side = float(np.hypot(0.2, 0.3))
    edges = [
        Edge(a=0, b=1, rest_length=0.4, stiffness=600.0, actuated=actuated),
        Edge(a=0, b=2, rest_length=side, stiffness=600.0, actuated=actuated),
        Edge(a=1, b=2, rest_length=side, stiffness=600.0, actuated=actuated),
    ]
    return MorphologyGenome(genome_id="triangle", nodes=nodes, edges=edges)


def single_node() -> MorphologyGenome:
    return MorphologyGenome(genome_id="dot", nodes=[Node(x=0.0, y=0.0, mass=1.0)])


class ScriptedEnvironment(LocomotionEnvironment):
    """
    Skips the physics: every episode runs in full and scores a fixed function of the
    design and the controller. Counts the steps it hands out.
    """

    constant: bool = False
    _steps: int = PrivateAttr(default=0)
    _calls: List[Any] = PrivateAttr(default_factory=list)

    def simulate(self, genome, controller, episode_steps):
        self._steps += episode_steps
        self._calls.append(episode_steps)
        if self.constant:
            return EpisodeResult(objective=0.0, steps_consumed=episode_steps)
        values = np.asarray(getattr(controller, "values", controller), dtype=float)
        objective = 0.1 * len(genome.nodes) + float(np.sum(values))
        return EpisodeResult(objective=objective, steps_consumed=episode_steps)


class CountingEnvironment(LocomotionEnvironment):
    """
    The real environment, plus a tally of every simulated step.
    """

    _steps: int = PrivateAttr(default=0)

    def simulate(self, genome, controller, episode_steps):
        result = super().simulate(genome, controller, episode_steps)
        self._steps += result.steps_consumed
        return result


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def scripted_env():
    return ScriptedEnvironment()


@pytest.fixture
def counting_env():
    return CountingEnvironment()
