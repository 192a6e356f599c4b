import logging
import math
from typing import Any, List, Sequence, Tuple

import numpy as np
from project.errors import ContractViolationError
from pydantic import BaseModel, ConfigDict, Field, model_validator

logger = logging.getLogger(__name__)

PARAMS_PER_ACTUATOR = 3
DEFAULT_DT = 0.01
ACTUATION_FREQUENCY = 1.0
AMPLITUDE_LIMIT = 0.4
OFFSET_LIMIT = 0.2
FRICTION = 0.8
# fraction of the Verlet velocity removed every step
DAMPING = 0.02
GRAVITY = 9.81
DIVERGENCE_BOUND = 1e6
# how far below the ground a node may start or sit; contact clamps to the line
CONTACT_TOLERANCE = 1e-9
_MIN_LENGTH = 1e-9


class Node(BaseModel):
    """
    A point mass of the robot, at its initial position.
    """

    model_config = ConfigDict(frozen=True)

    x: float
    y: float
    mass: float = Field(gt=0)


class Edge(BaseModel):
    """
    A spring between two nodes. Actuated edges oscillate their rest length.
    """

    model_config = ConfigDict(frozen=True)

    a: int = Field(ge=0)
    b: int = Field(ge=0)
    rest_length: float = Field(gt=0)
    stiffness: float = Field(gt=0)
    actuated: bool = False


class MorphologyGraph(BaseModel):
    """
    Point masses connected by springs, standing on a flat ground line.

    Gravity is the magnitude of the downward acceleration in m/s^2.
    """

    model_config = ConfigDict(frozen=True)

    nodes: List[Node]
    edges: List[Edge] = Field(default_factory=list)
    gravity: float = GRAVITY
    ground_y: float = 0.0

    @model_validator(mode="after")
    def check_graph(self) -> "MorphologyGraph":
        n = len(self.nodes)
        if n == 0:
            raise ValueError("a morphology needs at least one node")
        seen = set()
        for edge in self.edges:
            if edge.a >= n or edge.b >= n:
                raise ValueError(f"edge ({edge.a}, {edge.b}) references a missing node")
            if edge.a == edge.b:
                raise ValueError(f"self-edge on node {edge.a}")
            pair = (min(edge.a, edge.b), max(edge.a, edge.b))
            if pair in seen:
                raise ValueError(f"duplicate edge {pair}")
            seen.add(pair)
        for i, node in enumerate(self.nodes):
            if node.y < self.ground_y - CONTACT_TOLERANCE:
                raise ValueError(f"node {i} starts below the ground")
        if not is_connected(n, [(e.a, e.b) for e in self.edges]):
            raise ValueError("morphology graph is not connected")
        return self

    def actuated_edges(self) -> List[int]:
        return [i for i, e in enumerate(self.edges) if e.actuated]


class SimState(BaseModel):
    """
    Verlet state: current and previous node positions.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    positions: np.ndarray
    previous: np.ndarray
    elapsed_steps: int = 0


class EpisodeResult(BaseModel):
    """
    Outcome of one episode. A diverged episode scores -inf.
    """

    objective: float
    steps_consumed: int
    diverged: bool = False


class Trajectory(BaseModel):
    """
    Node positions after every simulated step, plus the center-of-mass x series
    (entry 0 is the initial state, entry k the state after k steps).
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    frames: np.ndarray
    com_x: np.ndarray
    result: EpisodeResult


def is_connected(n: int, pairs: Sequence[Tuple[int, int]]) -> bool:
    """
    Breadth-first connectivity check over an undirected edge list.
    """
    if n <= 1:
        return True
    adjacency: List[List[int]] = [[] for _ in range(n)]
    for a, b in pairs:
        adjacency[a].append(b)
        adjacency[b].append(a)
    visited = {0}
    frontier = [0]
    while frontier:
        nxt = []
        for node in frontier:
            for other in adjacency[node]:
                if other not in visited:
                    visited.add(other)
                    nxt.append(other)
        frontier = nxt
    return len(visited) == n


def control_dim(genome: MorphologyGraph) -> int:
    """
    Number of controller parameters a morphology needs: three (amplitude, phase,
    offset) per actuated edge.
    """
    return PARAMS_PER_ACTUATOR * sum(1 for e in genome.edges if e.actuated)


def clamp_controller(values: Any) -> np.ndarray:
    """
    Clamps a flat (amplitude, phase, offset) vector into the actuator box.
    """
    v = np.asarray(getattr(values, "values", values), dtype=float).reshape(-1)
    if v.size % PARAMS_PER_ACTUATOR:
        raise ContractViolationError(
            f"controller length {v.size} is not a multiple of {PARAMS_PER_ACTUATOR}"
        )
    triples = v.reshape(-1, PARAMS_PER_ACTUATOR).copy()
    np.clip(triples[:, 0], -AMPLITUDE_LIMIT, AMPLITUDE_LIMIT, out=triples[:, 0])
    np.clip(triples[:, 1], -math.pi, math.pi, out=triples[:, 1])
    np.clip(triples[:, 2], -OFFSET_LIMIT, OFFSET_LIMIT, out=triples[:, 2])
    return triples


def center_of_mass_x(positions: np.ndarray, masses: np.ndarray) -> float:
    return float(np.sum(masses * positions[:, 0]) / np.sum(masses))


class _Body:
    """
    Array view of a morphology plus its clamped actuator parameters.
    """

    def __init__(self, genome: MorphologyGraph, controller: Any):
        expected = control_dim(genome)
        raw = np.asarray(getattr(controller, "values", controller), dtype=float)
        if raw.size != expected:
            raise ContractViolationError(
                f"controller has {raw.size} parameters, the genome needs {expected}"
            )
        self.positions = np.array([[n.x, n.y] for n in genome.nodes], dtype=float)
        self.masses = np.array([n.mass for n in genome.nodes], dtype=float)
        self.ia = np.array([e.a for e in genome.edges], dtype=np.intp)
        self.ib = np.array([e.b for e in genome.edges], dtype=np.intp)
        self.rest = np.array([e.rest_length for e in genome.edges], dtype=float)
        self.stiffness = np.array([e.stiffness for e in genome.edges], dtype=float)
        self.actuated = np.array(genome.actuated_edges(), dtype=np.intp)
        triples = clamp_controller(raw) if expected else np.zeros((0, 3))
        self.amplitude = triples[:, 0]
        self.phase = triples[:, 1]
        self.offset = triples[:, 2]
        self.gravity = genome.gravity
        self.ground_y = genome.ground_y

    def rest_lengths(self, step: int, dt: float) -> np.ndarray:
        rest = self.rest.copy()
        if self.actuated.size:
            angle = 2.0 * math.pi * ACTUATION_FREQUENCY * step * dt + self.phase
            rest[self.actuated] = self.rest[self.actuated] * (
                1.0 + self.amplitude * np.sin(angle) + self.offset
            )
        return rest

    def spring_forces(self, positions: np.ndarray, rest: np.ndarray) -> np.ndarray:
        forces = np.zeros_like(positions)
        if self.ia.size == 0:
            return forces
        d = positions[self.ib] - positions[self.ia]
        length = np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1])
        length = np.maximum(length, _MIN_LENGTH)
        magnitude = self.stiffness * (length - rest) / length
        f = d * magnitude[:, None]
        np.add.at(forces, self.ia, f)
        np.subtract.at(forces, self.ib, f)
        return forces


def _step(
    body: _Body,
    state: SimState,
    dt: float,
    friction: float,
    damping: float,
) -> np.ndarray:
    pos = state.positions
    rest = body.rest_lengths(state.elapsed_steps, dt)
    acc = body.spring_forces(pos, rest) / body.masses[:, None]
    acc[:, 1] -= body.gravity
    new = pos + (pos - state.previous) * (1.0 - damping) + acc * (dt * dt)

    below = new[:, 1] < body.ground_y
    if np.any(below):
        penetration = body.ground_y - new[below, 1]
        new[below, 1] = body.ground_y
        dx = new[below, 0] - pos[below, 0]
        slide = np.maximum(np.abs(dx) - friction * penetration, 0.0)
        new[below, 0] = pos[below, 0] + np.sign(dx) * slide
    return new


def _diverged(positions: np.ndarray) -> bool:
    return not np.all(np.isfinite(positions)) or bool(
        np.max(np.abs(positions)) > DIVERGENCE_BOUND
    )


def _run(
    genome: MorphologyGraph,
    controller: Any,
    episode_steps: int,
    dt: float,
    friction: float,
    damping: float,
    record: bool,
) -> Tuple[EpisodeResult, List[np.ndarray]]:
    if episode_steps < 1:
        raise ContractViolationError("episode_steps must be at least 1")
    if dt <= 0:
        raise ContractViolationError("dt must be positive")
    body = _Body(genome, controller)
    start = body.positions.copy()
    state = SimState(positions=start.copy(), previous=start.copy())
    initial_com = center_of_mass_x(start, body.masses)
    frames = [start.copy()] if record else []
    for _ in range(episode_steps):
        new = _step(body, state, dt, friction, damping)
        state.previous = state.positions
        state.positions = new
        state.elapsed_steps += 1
        if record:
            frames.append(new.copy())
        if _diverged(new):
            logger.debug("episode diverged after %d steps", state.elapsed_steps)
            return (
                EpisodeResult(
                    objective=-math.inf,
                    steps_consumed=state.elapsed_steps,
                    diverged=True,
                ),
                frames,
            )
    objective = center_of_mass_x(state.positions, body.masses) - initial_com
    return (
        EpisodeResult(objective=objective, steps_consumed=state.elapsed_steps),
        frames,
    )


def simulate_episode(
    genome: MorphologyGraph,
    controller: Any,
    episode_steps: int,
    dt: float = DEFAULT_DT,
    friction: float = FRICTION,
    damping: float = DAMPING,
) -> EpisodeResult:
    """
    Simulates one open-loop episode and scores it.

    Args:
        genome (MorphologyGraph): The morphology to simulate.
        controller: ControllerParams or a flat vector of length control_dim(genome).
        episode_steps (int): Number of integration steps to run.
        dt (float): Integration step in seconds.

    Returns:
        EpisodeResult: Final minus initial center-of-mass x, the steps actually
        simulated and whether the state diverged.
    """
    result, _ = _run(genome, controller, episode_steps, dt, friction, damping, False)
    return result


def simulate_trajectory(
    genome: MorphologyGraph,
    controller: Any,
    episode_steps: int,
    dt: float = DEFAULT_DT,
    friction: float = FRICTION,
    damping: float = DAMPING,
) -> Trajectory:
    """
    Same as simulate_episode, but keeps every frame for replay and inspection.
    """
    result, frames = _run(genome, controller, episode_steps, dt, friction, damping, True)
    stacked = np.stack(frames)
    masses = np.array([n.mass for n in genome.nodes], dtype=float)
    com_x = stacked[:, :, 0] @ masses / np.sum(masses)
    return Trajectory(frames=stacked, com_x=com_x, result=result)


def mechanical_energy(
    genome: MorphologyGraph,
    positions: np.ndarray,
    previous: np.ndarray,
    dt: float = DEFAULT_DT,
) -> float:
    """
    Kinetic plus elastic plus gravitational energy of a passive (unactuated) state.
    """
    body = _Body(genome, np.zeros(control_dim(genome)))
    velocity = (positions - previous) / dt
    kinetic = 0.5 * float(np.sum(body.masses * np.sum(velocity * velocity, axis=1)))
    elastic = 0.0
    if body.ia.size:
        d = positions[body.ib] - positions[body.ia]
        length = np.sqrt(np.sum(d * d, axis=1))
        elastic = 0.5 * float(np.sum(body.stiffness * (length - body.rest) ** 2))
    height = positions[:, 1] - body.ground_y
    potential = float(np.sum(body.masses * body.gravity * height))
    return kinetic + elastic + potential


def mirror_genome(genome: MorphologyGraph) -> MorphologyGraph:
    """
    Reflects the morphology about the vertical axis x = 0, keeping node order.
    The simulator is reflection-symmetric, so the mirrored robot scores exactly
    the negated objective under the same controller.
    """
    nodes = [node.model_copy(update={"x": -node.x}) for node in genome.nodes]
    return genome.model_copy(update={"nodes": nodes})


class LocomotionEnvironment(BaseModel):
    """
    The built-in desk-scale locomotion task: move the center of mass to the right.
    """

    dt: float = Field(default=DEFAULT_DT, gt=0)
    friction: float = Field(default=FRICTION, ge=0)
    damping: float = Field(default=DAMPING, ge=0, lt=1)

    def simulate(
        self, genome: MorphologyGraph, controller: Any, episode_steps: int
    ) -> EpisodeResult:
        return simulate_episode(
            genome, controller, episode_steps, self.dt, self.friction, self.damping
        )

    def trajectory(
        self, genome: MorphologyGraph, controller: Any, episode_steps: int
    ) -> Trajectory:
        return simulate_trajectory(
            genome, controller, episode_steps, self.dt, self.friction, self.damping
        )
