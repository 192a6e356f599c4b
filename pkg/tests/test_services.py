import asyncio
import csv

import pytest
from conftest import single_node, symmetric_triangle
from project.analyzeExperiment_service import Experiment, analyzeExperiment
from project.config import parse_config_text, write_manifest
from project.budget import ReductionConfig
from project.controller import TrainingBudget
from project.engine import RunEvent, RunLogRow, ScheduleConfig, ScheduleKind, run_retrain_end
from project.errors import ConfigError, ContractViolationError, MissingArtifactError
from project.genome import to_payload
from project.optimizers import EsConfig
from project.replayRun_service import replayRun
from project.runExperiment_service import _plan_workers, runExperiment
from project.runlog import RunLogWriter, log_filename, read_runlog

TINY = """\
experiment.max_steps = 3000
experiment.repetitions = 3
experiment.base_episodes = 2
experiment.base_episode_steps = 100

schedule.single_phase_q100.kind = single_phase
schedule.single_phase_q100.design_mu = 2
schedule.single_phase_q100.design_lambda = 2

schedule.retrain_end_q50.kind = retrain_end
schedule.retrain_end_q50.reduced_quantity = 0.5
schedule.retrain_end_q50.design_mu = 2
schedule.retrain_end_q50.design_lambda = 2
"""

CRAFTED = """\
experiment.max_steps = 2000
experiment.repetitions = 2
experiment.base_episodes = 2
experiment.base_episode_steps = 50
experiment.checkpoints = 4
experiment.bootstrap_resamples = 100
"""


def _tiny_config(tmp_path):
    path = tmp_path / "tiny.conf"
    path.write_text(TINY)
    return str(path)


def _csv_bytes(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.glob("*.csv"))}


def _crafted_dir(tmp_path, arms):
    """
    Writes a manifest with the given {arm: (kind, reduced_quantity, objective,
    complexity)} and two hand-made logs per arm.
    """
    text = CRAFTED
    for arm, (kind, quantity, _, _) in arms.items():
        text += f"schedule.{arm}.kind = {kind}\n"
        text += f"schedule.{arm}.reduced_quantity = {quantity}\n"
    config = parse_config_text(text)
    out = tmp_path / "crafted"
    out.mkdir()
    write_manifest(config, out)
    payload = to_payload(single_node(), [], 0, 50)
    for arm, (kind, _, objective, complexity) in arms.items():
        for seed in config.seeds():
            rows = [
                RunLogRow(used_steps=1000, event=RunEvent.DESIGN_EVAL, genome_id="d0", objective=objective, complexity=complexity),
                RunLogRow(used_steps=1000, event=RunEvent.NEW_BEST, genome_id="d0", objective=objective, complexity=complexity, payload=payload),
            ]
            if kind == "retrain_end":
                rows.append(RunLogRow(used_steps=2000, event=RunEvent.RETRAIN, genome_id="d0", objective=objective, complexity=complexity, payload=payload))
            rows.append(RunLogRow(used_steps=2000, event=RunEvent.FINAL, genome_id="d0", objective=objective, complexity=complexity, payload=payload))
            writer = RunLogWriter(out / log_filename(arm, seed))
            for row in rows:
                writer(row)
    return out


EXP1_ARMS = {
    "single_phase_q100": ("single_phase", 1.0, 2.0, 0),
    "single_phase_q25": ("single_phase", 0.25, 1.0, 0),
    "retrain_end_q25": ("retrain_end", 0.25, 3.0, 0),
}


def test_run_writes_one_log_per_arm_and_seed(tmp_path) -> None:
    out = tmp_path / "out"
    res = asyncio.run(runExperiment(_tiny_config(tmp_path), str(out)))

    assert len(res.runs) == 6
    assert (out / "experiment.json").exists()
    assert sorted(_csv_bytes(out)) == sorted(
        log_filename(arm, seed)
        for arm in ("single_phase_q100", "retrain_end_q50")
        for seed in range(3)
    )
    for run in res.runs:
        assert run.used_steps <= 3000
        assert read_runlog(out / log_filename(run.arm, run.seed)).final is not None


def test_runs_are_reproducible_across_directories(tmp_path) -> None:
    config = _tiny_config(tmp_path)
    asyncio.run(runExperiment(config, str(tmp_path / "a")))
    asyncio.run(runExperiment(config, str(tmp_path / "b")))

    assert _csv_bytes(tmp_path / "a") == _csv_bytes(tmp_path / "b")


def test_spare_jobs_evaluate_candidates_without_changing_logs(tmp_path) -> None:
    path = tmp_path / "pair.conf"
    path.write_text(TINY.replace("experiment.repetitions = 3", "experiment.repetitions = 1"))
    asyncio.run(runExperiment(str(path), str(tmp_path / "serial"), jobs=1))
    res = asyncio.run(runExperiment(str(path), str(tmp_path / "pooled"), jobs=4))

    assert len(res.runs) == 2
    assert _csv_bytes(tmp_path / "pooled") == _csv_bytes(tmp_path / "serial")


@pytest.mark.parametrize(
    "jobs, runs, workers", [(1, 6, 1), (4, 6, 1), (4, 2, 2), (5, 2, 2), (8, 1, 8)]
)
def test_jobs_are_split_between_runs_and_candidates(jobs, runs, workers) -> None:
    pool, candidate_workers = _plan_workers(jobs, runs)
    pool.shutdown()

    assert candidate_workers == workers


def test_seed_offset_shifts_the_file_names(tmp_path) -> None:
    out = tmp_path / "out"
    asyncio.run(runExperiment(_tiny_config(tmp_path), str(out), seed_offset=5))

    assert {p.name for p in out.glob("single_phase_q100_*.csv")} == {
        "single_phase_q100_5.csv",
        "single_phase_q100_6.csv",
        "single_phase_q100_7.csv",
    }


def test_interrupted_run_resumes_to_identical_bytes(tmp_path) -> None:
    out = tmp_path / "out"
    config = _tiny_config(tmp_path)
    asyncio.run(runExperiment(config, str(out)))
    expected = _csv_bytes(out)

    victim = out / log_filename("retrain_end_q50", 1)
    data = victim.read_bytes()
    victim.write_bytes(data[: len(data) // 2])
    res = asyncio.run(runExperiment(config, str(out)))

    assert _csv_bytes(out) == expected
    assert sum(not run.skipped for run in res.runs) == 1


def test_unwritable_output_fails_before_running(tmp_path) -> None:
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")

    with pytest.raises(ConfigError):
        asyncio.run(runExperiment(_tiny_config(tmp_path), str(blocker / "out")))
    assert list(tmp_path.rglob("*.csv")) == []


def test_config_without_arms_is_rejected(tmp_path) -> None:
    path = tmp_path / "empty.conf"
    path.write_text("experiment.max_steps = 100\n")

    with pytest.raises(ConfigError):
        asyncio.run(runExperiment(str(path), str(tmp_path / "out")))


def test_exp1_ranks_arms_by_final_objective(tmp_path) -> None:
    out = _crafted_dir(tmp_path, EXP1_ARMS)
    res = asyncio.run(analyzeExperiment(str(out), Experiment.EXP1))

    assert res.summary[0] == (
        "final objective means in dominance order: retrain_end_q25 (3.0000) >= "
        "single_phase_q100 (2.0000) >= single_phase_q25 (1.0000)"
    )
    assert (out / "exp1_objective.csv").exists()
    assert (out / "exp1_summary.txt").read_text().splitlines() == res.summary


def test_exp4_writes_one_complexity_series_per_level(tmp_path) -> None:
    arms = {
        f"single_phase_q{q}": ("single_phase", q / 100, 1.0, 20 - q // 10)
        for q in (100, 50, 25, 10)
    }
    out = _crafted_dir(tmp_path, arms)
    asyncio.run(analyzeExperiment(str(out), Experiment.EXP4))

    with (out / "exp4_complexity.csv").open() as handle:
        rows = list(csv.DictReader(handle))
    assert {row["series"] for row in rows} == set(arms)
    assert {float(row["mean"]) for row in rows if row["series"] == "single_phase_q10"} == {19.0}


def test_exp2_measures_every_arm_against_the_standard_run(tmp_path) -> None:
    arms = {"single_phase_q100": ("single_phase", 1.0, 1.0, 0)}
    for q in (75, 25, 10):
        arms[f"retrain_end_q{q}"] = ("retrain_end", q / 100, 2.0, 0)
        arms[f"retrain_end_l{q}"] = ("retrain_end", 1.0, 0.5, 0)
    out = _crafted_dir(tmp_path, arms)
    res = asyncio.run(analyzeExperiment(str(out), Experiment.EXP2))
    differences = [line for line in res.summary if line.startswith("baseline difference")]

    assert len(differences) == 6
    assert (
        "baseline difference retrain_end_q10 - single_phase_q100: "
        "mean 1.0000 [1.0000, 1.0000] median 1.0000 (n=2)"
    ) in differences
    assert (
        "baseline difference retrain_end_l25 - single_phase_q100: "
        "mean -0.5000 [-0.5000, -0.5000] median -0.5000 (n=2)"
    ) in differences


def test_exp2_without_the_standard_run_is_incomplete(tmp_path) -> None:
    arms = {f"retrain_end_q{q}": ("retrain_end", q / 100, 2.0, 0) for q in (75, 25, 10)}
    arms.update({f"retrain_end_l{q}": ("retrain_end", 1.0, 0.5, 0) for q in (75, 25, 10)})
    out = _crafted_dir(tmp_path, arms)

    with pytest.raises(MissingArtifactError) as info:
        asyncio.run(analyzeExperiment(str(out), Experiment.EXP2))

    assert len(info.value.missing) == 2
    assert all("single_phase_q100" in path for path in info.value.missing)


def test_missing_arms_fail_without_writing_a_report(tmp_path) -> None:
    out = _crafted_dir(tmp_path, EXP1_ARMS)

    with pytest.raises(MissingArtifactError) as info:
        asyncio.run(analyzeExperiment(str(out), Experiment.EXP4))

    assert len(info.value.missing) == 4
    assert list(out.glob("exp4_*")) == []


def test_analysis_needs_a_manifest(tmp_path) -> None:
    with pytest.raises(ConfigError):
        asyncio.run(analyzeExperiment(str(tmp_path), Experiment.EXP1))


def test_replay_reproduces_a_logged_new_best(tmp_path) -> None:
    out = tmp_path / "out"
    asyncio.run(runExperiment(_tiny_config(tmp_path), str(out)))
    path = out / log_filename("single_phase_q100", 0)
    log = read_runlog(path)
    index = next(k for k, row in enumerate(log.rows) if row.event == RunEvent.NEW_BEST)

    res = asyncio.run(replayRun(str(path), index))

    assert res.reproduced
    assert res.objective == log.rows[index].objective
    lines = open(res.trajectory_path).read().splitlines()
    assert len(lines) == res.frames
    assert lines[0].split()[0] == "1"


def _single_row_log(tmp_path, row):
    path = tmp_path / "manual_0.csv"
    RunLogWriter(path)(row)
    return path


def test_resting_symmetric_design_does_not_drift(tmp_path) -> None:
    # an asymmetric body would drift while it settles under gravity
    payload = to_payload(symmetric_triangle(), [0.0] * 9, 0, 200)
    path = _single_row_log(
        tmp_path,
        RunLogRow(used_steps=200, event=RunEvent.NEW_BEST, genome_id="triangle", objective=0.0, complexity=9, payload=payload),
    )
    res = asyncio.run(replayRun(str(path), 0, str(tmp_path / "trace.txt")))
    lines = (tmp_path / "trace.txt").read_text().splitlines()

    assert res.frames == 200
    assert len(lines) == 200
    assert all(abs(float(line.split()[1])) < 1e-6 for line in lines)


def test_row_without_a_design_cannot_be_replayed(tmp_path) -> None:
    path = _single_row_log(
        tmp_path,
        RunLogRow(used_steps=100, event=RunEvent.DESIGN_EVAL, genome_id="x", objective=0.5, complexity=3),
    )

    with pytest.raises(MissingArtifactError):
        asyncio.run(replayRun(str(path), 0))
    with pytest.raises(ContractViolationError):
        asyncio.run(replayRun(str(path), 4))


def test_budget_below_one_retraining_logs_only_replayable_designs(tmp_path) -> None:
    config = ScheduleConfig(
        schedule=ScheduleKind.RETRAIN_END,
        reduction=ReductionConfig(base_episodes=4, base_episode_steps=60),
        retrain_budget=TrainingBudget(episodes=8, episode_steps=60),
        design_algo=EsConfig(mu=2, lambda_=3),
        max_steps=300,
        size_bias=0.3,
    )
    path = tmp_path / log_filename("retrain_end_q100", 0)
    run_retrain_end(config, on_row=RunLogWriter(path))
    log = read_runlog(path)

    assert [row.payload for row in log.by_event(RunEvent.NEW_BEST)] == [""]
    replayable = [k for k, row in enumerate(log.rows) if row.payload]
    assert [log.rows[k].event for k in replayable] == [RunEvent.RETRAIN, RunEvent.FINAL]
    for k in replayable:
        res = asyncio.run(replayRun(str(path), k, str(tmp_path / f"row{k}.txt")))
        assert res.reproduced
