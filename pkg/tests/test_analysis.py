import csv
import math
import random

import numpy as np
import pytest
from project.analysis import (
    CurveBundle,
    bootstrap_ci,
    complexity_curve,
    default_checkpoints,
    difference_curve,
    final_summary,
    objective_curve,
    objective_values,
    scoring_rows,
    summarize,
    write_curves_csv,
)
from project.engine import RunEvent, RunLog, RunLogRow
from project.errors import ContractViolationError


def _log(rows, schedule="single_phase", seed=0) -> RunLog:
    return RunLog(
        schedule=schedule,
        master_seed=seed,
        rows=[
            RunLogRow(used_steps=t, event=e, genome_id=f"g{k}", objective=o, complexity=c)
            for k, (t, e, o, c) in enumerate(rows)
        ],
    )


def _oracle_interval(sample, resamples, confidence, seed):
    draw = random.Random(seed)
    n = len(sample)
    means = sorted(
        sum(sample[draw.randrange(n)] for _ in range(n)) / n for _ in range(resamples)
    )
    alpha = 1 - confidence
    return means[int(alpha / 2 * resamples)], means[int((1 - alpha / 2) * resamples) - 1]


def test_constant_sample_has_a_degenerate_interval() -> None:
    assert bootstrap_ci([3, 3, 3, 3]) == (3.0, 3.0, 3.0)


def test_bootstrap_matches_brute_force_resampling() -> None:
    sample = list(np.random.default_rng(2024).normal(0.0, 1.0, size=60))
    mean, lower, upper = bootstrap_ci(sample, 0.95, 10_000, np.random.default_rng(0))
    oracle_lower, oracle_upper = _oracle_interval(sample, 10_000, 0.95, seed=99)

    assert mean == pytest.approx(float(np.mean(sample)))
    assert lower == pytest.approx(oracle_lower, abs=0.02)
    assert upper == pytest.approx(oracle_upper, abs=0.02)


def test_interval_always_contains_the_mean() -> None:
    rng = np.random.default_rng(1)
    for size in (1, 2, 5, 30):
        mean, lower, upper = bootstrap_ci(rng.exponential(size=size), resamples=500, rng=rng)
        assert lower <= mean <= upper


def test_bootstrap_is_deterministic_per_stream() -> None:
    sample = [0.1, 0.5, 0.2, 0.9, 0.4]

    assert bootstrap_ci(sample, rng=np.random.default_rng(3)) == bootstrap_ci(
        sample, rng=np.random.default_rng(3)
    )


def test_empty_sample_is_rejected() -> None:
    with pytest.raises(ContractViolationError):
        bootstrap_ci([])


def test_default_grid_is_log_spaced_from_one_thousand() -> None:
    grid = default_checkpoints(200_000)

    assert grid[0] == 1_000
    assert grid[-1] == 200_000
    assert len(grid) <= 64
    assert all(b > a for a, b in zip(grid, grid[1:]))


def test_curve_carries_the_best_objective_forward() -> None:
    log = _log(
        [
            (1_000, RunEvent.DESIGN_EVAL, 1.0, 3),
            (1_000, RunEvent.NEW_BEST, 1.0, 3),
            (3_000, RunEvent.NEW_BEST, 2.0, 6),
            (5_000, RunEvent.FINAL, 2.0, 6),
        ]
    )
    values = objective_values(log, [500, 1_000, 2_000, 3_000, 4_000])

    assert math.isnan(values[0])
    assert values[1:] == [1.0, 1.0, 2.0, 2.0]


def test_two_phase_runs_are_scored_by_their_retrained_rows() -> None:
    log = _log(
        [
            (1_000, RunEvent.NEW_BEST, 5.0, 3),
            (2_000, RunEvent.RETRAIN, 1.5, 3),
            (2_000, RunEvent.FINAL, 1.5, 3),
        ],
        schedule="retrain_every_new_best",
    )

    assert [r.event for r in scoring_rows(log)] == [RunEvent.RETRAIN]
    values = objective_values(log, [1_500, 2_000])
    assert math.isnan(values[0])
    assert values[1] == 1.5


def test_complexity_curve_is_constant_after_a_single_new_best() -> None:
    log = _log([(1_000, RunEvent.NEW_BEST, 0.4, 18)])
    bundle = complexity_curve([log], [500, 1_000, 4_000, 9_000], resamples=100)

    assert bundle.checkpoints == [1_000, 4_000, 9_000]
    assert bundle.mean == [18.0, 18.0, 18.0]


def test_checkpoints_without_every_run_are_dropped() -> None:
    early = _log([(1_000, RunEvent.NEW_BEST, 1.0, 3)], seed=0)
    late = _log([(3_000, RunEvent.NEW_BEST, 2.0, 3)], seed=1)
    bundle = objective_curve([early, late], [1_000, 2_000, 3_000, 4_000], resamples=100)

    assert bundle.checkpoints == [3_000, 4_000]
    assert bundle.runs == ["0", "1"]
    assert bundle.mean == [1.5, 1.5]


def _bundle(label, values) -> CurveBundle:
    return summarize(
        label,
        [1_000, 2_000, 3_000],
        [str(k) for k in range(len(values))],
        values,
        resamples=500,
    )


def test_difference_of_identical_curves_is_zero() -> None:
    values = [[1.0, 2.0, 3.0], [0.5, 0.75, 2.0], [1.5, 1.5, 1.5]]
    diff = difference_curve(_bundle("a", values), _bundle("b", values))

    assert diff.mean == [0.0, 0.0, 0.0]
    assert all(lo <= 0.0 <= hi for lo, hi in zip(diff.lower, diff.upper))


def test_constant_offset_gives_a_zero_width_interval() -> None:
    b = [[1.0, 2.0, 3.0], [0.5, 0.75, 2.0], [1.5, 1.5, 1.5]]
    a = [[v + 1.0 for v in row] for row in b]
    diff = difference_curve(_bundle("a", a), _bundle("b", b))

    assert diff.mean == pytest.approx([1.0, 1.0, 1.0])
    assert diff.lower == diff.mean
    assert diff.upper == diff.mean


def test_difference_is_antisymmetric() -> None:
    a = _bundle("a", [[1.0, 2.0, 4.0], [0.0, 1.0, 1.0]])
    b = _bundle("b", [[0.5, 2.5, 3.0], [0.2, 0.1, 2.0]])

    forward = difference_curve(a, b)
    backward = difference_curve(b, a)

    assert forward.mean == pytest.approx([-m for m in backward.mean])


def test_difference_pairs_runs_by_label() -> None:
    a = summarize("a", [1_000], ["7", "3"], [[5.0], [1.0]], resamples=100)
    b = summarize("b", [1_000], ["3", "7"], [[1.0], [5.0]], resamples=100)

    assert difference_curve(a, b).mean == [0.0]


def test_difference_needs_matching_checkpoints() -> None:
    a = summarize("a", [1_000, 2_000], ["0"], [[1.0, 2.0]], resamples=100)
    b = summarize("b", [1_000, 3_000], ["0"], [[1.0, 2.0]], resamples=100)

    with pytest.raises(ContractViolationError):
        difference_curve(a, b)


def test_final_summary_reports_mean_and_median() -> None:
    summary = final_summary("arm", [1.0, 2.0, 9.0], resamples=200)

    assert summary.n == 3
    assert summary.mean == pytest.approx(4.0)
    assert summary.median == 2.0
    assert summary.lower <= summary.mean <= summary.upper


def test_curves_csv_has_one_line_per_series_and_checkpoint(tmp_path) -> None:
    bundles = [_bundle("a", [[1.0, 2.0, 3.0]]), _bundle("b", [[0.0, 0.0, 1.0]])]
    path = write_curves_csv(tmp_path / "curves.csv", bundles)

    with path.open() as handle:
        rows = list(csv.reader(handle))

    assert rows[0] == ["checkpoint", "mean", "lower", "upper", "series"]
    assert len(rows) == 7
    assert {row[4] for row in rows[1:]} == {"a", "b"}
