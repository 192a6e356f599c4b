import math

import numpy as np
import pytest
from conftest import chain_genome, single_node, symmetric_triangle
from project.errors import ContractViolationError
from project.genome import MorphologyGenome, random_genome
from project.physics import (
    CONTACT_TOLERANCE,
    Edge,
    LocomotionEnvironment,
    MorphologyGraph,
    Node,
    control_dim,
    mechanical_energy,
    mirror_genome,
    simulate_episode,
    simulate_trajectory,
)
from pydantic import ValidationError

GAIT = [0.35, 0.0, 0.1, 0.3, 1.2, -0.1]
# hand-tuned gait that walks the walker about 1.28 m to the right in 500 steps
STRIDE = [0.37, -3.04, 0.06, 0.15, -0.99, 0.17]


def _walker() -> MorphologyGenome:
    nodes = [
        Node(x=0.0, y=0.0, mass=1.2),
        Node(x=0.35, y=0.0, mass=0.8),
        Node(x=0.15, y=0.25, mass=1.0),
    ]
    edges = [
        Edge(a=0, b=1, rest_length=0.35, stiffness=700.0, actuated=True),
        Edge(a=0, b=2, rest_length=float(np.hypot(0.15, 0.25)), stiffness=500.0),
        Edge(a=1, b=2, rest_length=float(np.hypot(0.2, 0.25)), stiffness=500.0, actuated=True),
    ]
    return MorphologyGenome(genome_id="walker", nodes=nodes, edges=edges)


def test_control_dim_counts_three_parameters_per_actuator() -> None:
    assert control_dim(chain_genome(7, actuated=6)) == 18
    assert control_dim(chain_genome(7, actuated=2)) == 6
    assert control_dim(chain_genome(4, actuated=0)) == 0


def test_single_passive_mass_does_not_move() -> None:
    result = simulate_episode(single_node(), [], 100)

    assert result.objective == 0.0
    assert result.steps_consumed == 100
    assert not result.diverged


def test_zero_amplitude_symmetric_design_has_no_drift() -> None:
    # only a left-right symmetric body settles in place; asymmetric ones slide while sagging
    genome = symmetric_triangle()
    result = simulate_episode(genome, [0.0] * control_dim(genome), 500)

    assert abs(result.objective) < 1e-6
    assert result.steps_consumed == 500


def test_simulation_is_bit_identical_across_calls() -> None:
    first = simulate_episode(_walker(), GAIT, 300)
    second = simulate_episode(_walker(), GAIT, 300)

    assert first == second


def test_mirrored_design_scores_the_negated_objective() -> None:
    genome = _walker()
    result = simulate_episode(genome, GAIT, 400)
    mirrored = simulate_episode(mirror_genome(genome), GAIT, 400)

    assert result.objective != 0.0
    assert mirrored.objective == -result.objective
    assert [n.x for n in mirror_genome(genome).nodes] == [-n.x for n in genome.nodes]


def test_trajectory_prefix_matches_shorter_episode() -> None:
    long = simulate_trajectory(_walker(), GAIT, 120)
    short = simulate_trajectory(_walker(), GAIT, 60)

    assert long.frames.shape == (121, 3, 2)
    assert np.array_equal(long.frames[:61], short.frames)
    assert short.result == simulate_episode(_walker(), GAIT, 60)


def test_controller_length_must_match_design() -> None:
    with pytest.raises(ContractViolationError):
        simulate_episode(_walker(), [0.1, 0.2, 0.3], 10)


def test_out_of_range_parameters_are_clamped() -> None:
    clamped = simulate_episode(_walker(), [0.4, 0.0, 0.2, 0.4, 1.0, 0.2], 200)
    wild = simulate_episode(_walker(), [9.0, 0.0, 5.0, 3.0, 1.0, 1.0], 200)

    assert clamped == wild


def test_unstable_integration_reports_divergence() -> None:
    genome = MorphologyGraph(
        nodes=[Node(x=0.0, y=5.0, mass=1.0), Node(x=1.0, y=5.0, mass=1.0)],
        edges=[Edge(a=0, b=1, rest_length=0.5, stiffness=1000.0)],
    )
    result = LocomotionEnvironment(dt=0.5).simulate(genome, [], 200)

    assert result.diverged
    assert result.objective == -math.inf
    assert result.steps_consumed < 200


def test_passive_design_does_not_gain_energy() -> None:
    genome = symmetric_triangle(actuated=False)
    trajectory = simulate_trajectory(genome, [], 500)
    frames = trajectory.frames

    initial = mechanical_energy(genome, frames[0], frames[0])
    final = mechanical_energy(genome, frames[-1], frames[-2])

    assert final <= initial + 1e-9


@pytest.mark.parametrize(
    "nodes, edges",
    [
        ([], []),
        ([Node(x=0, y=0, mass=1), Node(x=1, y=0, mass=1)], []),
        ([Node(x=0, y=-0.1, mass=1)], []),
        (
            [Node(x=0, y=0, mass=1), Node(x=1, y=0, mass=1)],
            [
                Edge(a=0, b=1, rest_length=1, stiffness=300),
                Edge(a=1, b=0, rest_length=1, stiffness=300),
            ],
        ),
        ([Node(x=0, y=0, mass=1)], [Edge(a=0, b=0, rest_length=1, stiffness=300)]),
        ([Node(x=0, y=0, mass=1)], [Edge(a=0, b=3, rest_length=1, stiffness=300)]),
    ],
    ids=["empty", "disconnected", "underground", "duplicate", "self-edge", "dangling"],
)
def test_invalid_morphologies_are_rejected(nodes, edges) -> None:
    with pytest.raises(ValidationError):
        MorphologyGraph(nodes=nodes, edges=edges)


def test_hand_tuned_stride_walks_half_a_metre() -> None:
    result = simulate_episode(_walker(), STRIDE, 500)

    assert not result.diverged
    assert result.objective > 0.5
    assert result.objective == pytest.approx(1.276, abs=0.05)
    assert simulate_episode(_walker(), STRIDE, 500) == result


def test_stride_progress_is_steady() -> None:
    checkpoints = [simulate_episode(_walker(), STRIDE, n).objective for n in (100, 300, 500)]

    assert 0.0 < checkpoints[0] < checkpoints[1] < checkpoints[2]


@pytest.mark.parametrize("controller", [GAIT, STRIDE], ids=["gait", "stride"])
def test_nodes_never_sink_below_the_ground(controller) -> None:
    genome = _walker()
    frames = simulate_trajectory(genome, controller, 500).frames

    assert frames[:, :, 1].min() >= genome.ground_y - CONTACT_TOLERANCE


def test_random_designs_stay_above_the_ground(rng) -> None:
    for _ in range(10):
        genome = random_genome(rng, 0.3)
        controller = rng.uniform(-1.0, 1.0, size=control_dim(genome))
        frames = simulate_trajectory(genome, controller, 200).frames
        if np.all(np.isfinite(frames)):
            assert frames[:, :, 1].min() >= genome.ground_y - CONTACT_TOLERANCE


def test_start_within_contact_tolerance_is_accepted() -> None:
    MorphologyGraph(nodes=[Node(x=0.0, y=-0.5 * CONTACT_TOLERANCE, mass=1.0)])

    with pytest.raises(ValidationError):
        MorphologyGraph(nodes=[Node(x=0.0, y=-1e-6, mass=1.0)])
