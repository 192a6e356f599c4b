import json
import logging
import math
import uuid
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from project.physics import (
    Edge,
    MorphologyGraph,
    Node,
    control_dim,
    is_connected,
)
from pydantic import BaseModel, model_validator

logger = logging.getLogger(__name__)

MAX_NODES = 24
MAX_EDGES = 60
STRUCTURAL_SHARE = 0.6
DEFAULT_SIZE_BIAS = 0.5

MASS_RANGE = (0.5, 1.5)
STIFFNESS_RANGE = (200.0, 1000.0)
LIMB_RANGE = (0.2, 0.5)
REST_RANGE = (0.05, 2.0)
# extra edges are only drawn between nodes closer than this
BRACE_REACH = 0.6


class MorphologyGenome(MorphologyGraph):
    """
    A design: a morphology graph with an identity and its lineage.
    """

    genome_id: str
    parent_id: Optional[str] = None

    @model_validator(mode="after")
    def check_caps(self) -> "MorphologyGenome":
        if len(self.nodes) > MAX_NODES:
            raise ValueError(f"{len(self.nodes)} nodes exceed the cap of {MAX_NODES}")
        if len(self.edges) > MAX_EDGES:
            raise ValueError(f"{len(self.edges)} edges exceed the cap of {MAX_EDGES}")
        return self


class MutationOperator(str, Enum):
    ADD_NODE = "add_node"
    REMOVE_LEAF = "remove_leaf"
    ADD_EDGE = "add_edge"
    REMOVE_EDGE = "remove_edge"
    TOGGLE_ACTUATION = "toggle_actuation"
    PERTURB = "perturb"


STRUCTURAL_OPERATORS = (
    MutationOperator.ADD_NODE,
    MutationOperator.REMOVE_LEAF,
    MutationOperator.ADD_EDGE,
    MutationOperator.REMOVE_EDGE,
    MutationOperator.TOGGLE_ACTUATION,
)


def new_genome_id(rng: np.random.Generator) -> str:
    return str(uuid.UUID(bytes=rng.bytes(16), version=4))


def complexity(genome: MorphologyGraph) -> int:
    """
    Design complexity: the dimensionality of the design's control space.
    """
    return control_dim(genome)


def _distance(a: Node, b: Node) -> float:
    return math.hypot(b.x - a.x, b.y - a.y)


def _limb_end(
    anchor: Node, rng: np.random.Generator, ground_y: float
) -> Tuple[float, float]:
    length = rng.uniform(*LIMB_RANGE)
    angle = rng.uniform(0.0, math.pi)
    x = anchor.x + length * math.cos(angle)
    y = max(ground_y, anchor.y + length * math.sin(angle) * rng.choice([-1.0, 1.0]))
    return x, y


def _edge(a: int, b: int, nodes: Sequence[Node], rng: np.random.Generator) -> Edge:
    return Edge(
        a=a,
        b=b,
        rest_length=max(_distance(nodes[a], nodes[b]), REST_RANGE[0]),
        stiffness=float(rng.uniform(*STIFFNESS_RANGE)),
        actuated=bool(rng.random() < 0.5),
    )


def random_genome(
    rng: np.random.Generator, size_bias: float = DEFAULT_SIZE_BIAS
) -> MorphologyGenome:
    """
    Grows a random tree of limbs from a seed node resting on the ground, then
    braces nearby nodes with extra edges.

    Args:
        rng (np.random.Generator): The caller's stream.
        size_bias (float): In [0, 1]; 0 gives 2-4 nodes, larger values grow bigger robots.

    Returns:
        MorphologyGenome: A valid genome with rest lengths equal to the initial distances.
    """
    size_bias = min(max(size_bias, 0.0), 1.0)
    extra = int(rng.integers(0, MAX_NODES - 3))
    n_nodes = min(MAX_NODES, 2 + int(rng.integers(0, 3)) + int(round(size_bias * extra)))
    ground_y = 0.0
    nodes: List[Node] = [Node(x=0.0, y=ground_y, mass=float(rng.uniform(*MASS_RANGE)))]
    edges: List[Edge] = []
    while len(nodes) < n_nodes:
        anchor = int(rng.integers(len(nodes)))
        x, y = _limb_end(nodes[anchor], rng, ground_y)
        if min(math.hypot(x - n.x, y - n.y) for n in nodes) < LIMB_RANGE[0] / 2:
            continue
        nodes.append(Node(x=x, y=y, mass=float(rng.uniform(*MASS_RANGE))))
        edges.append(_edge(anchor, len(nodes) - 1, nodes, rng))
    linked = {(min(e.a, e.b), max(e.a, e.b)) for e in edges}
    for i in range(len(nodes)):
        for j in range(i + 1, len(nodes)):
            if len(edges) >= MAX_EDGES:
                break
            if (i, j) in linked or _distance(nodes[i], nodes[j]) > BRACE_REACH:
                continue
            if rng.random() < 0.5:
                edges.append(_edge(i, j, nodes, rng))
    return MorphologyGenome(
        genome_id=new_genome_id(rng),
        parent_id=None,
        nodes=nodes,
        edges=edges,
        ground_y=ground_y,
    )


def _degrees(genome: MorphologyGraph) -> List[int]:
    degree = [0] * len(genome.nodes)
    for e in genome.edges:
        degree[e.a] += 1
        degree[e.b] += 1
    return degree


def _add_node(genome: MorphologyGenome, rng: np.random.Generator) -> Optional[Dict[str, Any]]:
    if len(genome.nodes) >= MAX_NODES or len(genome.edges) >= MAX_EDGES:
        return None
    anchor = int(rng.integers(len(genome.nodes)))
    x, y = _limb_end(genome.nodes[anchor], rng, genome.ground_y)
    nodes = list(genome.nodes) + [Node(x=x, y=y, mass=float(rng.uniform(*MASS_RANGE)))]
    if min(_distance(nodes[-1], n) for n in genome.nodes) < LIMB_RANGE[0] / 2:
        return None
    edges = list(genome.edges) + [_edge(anchor, len(nodes) - 1, nodes, rng)]
    return {"nodes": nodes, "edges": edges}


def _remove_leaf(genome: MorphologyGenome, rng: np.random.Generator) -> Optional[Dict[str, Any]]:
    if len(genome.nodes) < 2:
        return None
    leaves = [i for i, d in enumerate(_degrees(genome)) if d == 1]
    if not leaves:
        return None
    leaf = leaves[int(rng.integers(len(leaves)))]
    nodes = [n for i, n in enumerate(genome.nodes) if i != leaf]

    def shift(i: int) -> int:
        return i - 1 if i > leaf else i

    edges = [
        e.model_copy(update={"a": shift(e.a), "b": shift(e.b)})
        for e in genome.edges
        if leaf not in (e.a, e.b)
    ]
    return {"nodes": nodes, "edges": edges}


def _add_edge(genome: MorphologyGenome, rng: np.random.Generator) -> Optional[Dict[str, Any]]:
    if len(genome.edges) >= MAX_EDGES:
        return None
    linked = {(min(e.a, e.b), max(e.a, e.b)) for e in genome.edges}
    free = [
        (i, j)
        for i in range(len(genome.nodes))
        for j in range(i + 1, len(genome.nodes))
        if (i, j) not in linked
    ]
    if not free:
        return None
    i, j = free[int(rng.integers(len(free)))]
    return {"edges": list(genome.edges) + [_edge(i, j, genome.nodes, rng)]}


def _remove_edge(genome: MorphologyGenome, rng: np.random.Generator) -> Optional[Dict[str, Any]]:
    n = len(genome.nodes)
    removable = [
        k
        for k in range(len(genome.edges))
        if is_connected(
            n, [(e.a, e.b) for m, e in enumerate(genome.edges) if m != k]
        )
    ]
    if not removable:
        return None
    k = removable[int(rng.integers(len(removable)))]
    return {"edges": [e for m, e in enumerate(genome.edges) if m != k]}


def _toggle_actuation(
    genome: MorphologyGenome, rng: np.random.Generator
) -> Optional[Dict[str, Any]]:
    if not genome.edges:
        return None
    k = int(rng.integers(len(genome.edges)))
    edges = list(genome.edges)
    edges[k] = edges[k].model_copy(update={"actuated": not edges[k].actuated})
    return {"edges": edges}


def _perturb(genome: MorphologyGenome, rng: np.random.Generator) -> Dict[str, Any]:
    if not genome.edges:
        k = int(rng.integers(len(genome.nodes)))
        nodes = list(genome.nodes)
        mass = float(np.clip(nodes[k].mass * math.exp(rng.normal(0.0, 0.2)), *MASS_RANGE))
        nodes[k] = nodes[k].model_copy(update={"mass": mass})
        return {"nodes": nodes}
    k = int(rng.integers(len(genome.edges)))
    edge = genome.edges[k]
    rest = float(np.clip(edge.rest_length * math.exp(rng.normal(0.0, 0.2)), *REST_RANGE))
    stiffness = float(
        np.clip(edge.stiffness * math.exp(rng.normal(0.0, 0.2)), *STIFFNESS_RANGE)
    )
    edges = list(genome.edges)
    edges[k] = edge.model_copy(update={"rest_length": rest, "stiffness": stiffness})
    return {"edges": edges}


_OPERATORS = {
    MutationOperator.ADD_NODE: _add_node,
    MutationOperator.REMOVE_LEAF: _remove_leaf,
    MutationOperator.ADD_EDGE: _add_edge,
    MutationOperator.REMOVE_EDGE: _remove_edge,
    MutationOperator.TOGGLE_ACTUATION: _toggle_actuation,
    MutationOperator.PERTURB: _perturb,
}


def _draw_operator(rng: np.random.Generator) -> MutationOperator:
    if rng.random() < STRUCTURAL_SHARE:
        return STRUCTURAL_OPERATORS[int(rng.integers(len(STRUCTURAL_OPERATORS)))]
    return MutationOperator.PERTURB


def mutate(
    genome: MorphologyGenome,
    rng: np.random.Generator,
    operator: Optional[MutationOperator] = None,
) -> MorphologyGenome:
    """
    Applies exactly one variation operator and returns the child; the parent is untouched.

    Operators that are inapplicable to this genome, or would produce an invalid one,
    are redrawn. Perturbation always applies, so the loop terminates. A forced
    operator that cannot apply falls back to the random draw.

    Args:
        genome (MorphologyGenome): The parent.
        rng (np.random.Generator): The caller's stream.
        operator (Optional[MutationOperator]): Force a specific operator.

    Returns:
        MorphologyGenome: A fresh genome whose parent_id is the parent's genome_id.
    """
    chosen = operator
    while True:
        if chosen is None:
            chosen = _draw_operator(rng)
        update = _OPERATORS[chosen](genome, rng)
        if update is not None:
            fields = genome.model_dump(exclude={"genome_id", "parent_id"})
            fields.update(update)
            try:
                child = MorphologyGenome(
                    genome_id=new_genome_id(rng), parent_id=genome.genome_id, **fields
                )
            except ValueError as e:
                logger.debug("rejected %s mutation: %s", chosen.value, e)
            else:
                logger.debug("applied %s to %s", chosen.value, genome.genome_id)
                return child
        chosen = None


class DesignPayload(BaseModel):
    """
    Canonical record of a design and its trained controller, embedded in run logs so
    designs can be replayed or retrained later.
    """

    design_index: int
    episode_steps: int
    genome: MorphologyGenome
    controller: List[float]


def to_payload(
    genome: MorphologyGenome,
    controller: Sequence[float],
    design_index: int,
    episode_steps: int,
) -> str:
    payload = DesignPayload(
        design_index=design_index,
        episode_steps=episode_steps,
        genome=genome,
        controller=[float(v) for v in controller],
    )
    return json.dumps(payload.model_dump(mode="json"), separators=(",", ":"))


def from_payload(text: str) -> DesignPayload:
    return DesignPayload.model_validate(json.loads(text))
