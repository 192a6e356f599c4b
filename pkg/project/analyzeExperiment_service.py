import csv
import logging
import math
from enum import Enum
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
from project.analysis import (
    CurveBundle,
    FinalSummary,
    common_checkpoints,
    complexity_curve,
    difference_curve,
    final_summary,
    objective_values,
    restrict,
    summarize,
    write_curves_csv,
)
from project.config import ExperimentConfig, read_manifest
from project.engine import (
    RunEvent,
    RunLog,
    ScheduleKind,
    detect_cheating,
    improvement_probability,
    retrain_end_curve,
)
from project.errors import MissingArtifactError
from project.genome import from_payload
from project.physics import LocomotionEnvironment
from project.runlog import is_complete, log_filename, read_runlog
from pydantic import BaseModel

logger = logging.getLogger(__name__)


class Experiment(str, Enum):
    EXP1 = "exp1"
    EXP2 = "exp2"
    EXP3 = "exp3"
    EXP4 = "exp4"
    TUNE = "tune"


QUANTITY_LEVELS = (100, 50, 25, 10)
RETRAIN_LEVELS = (75, 25, 10)
TUNE_EPISODES = (8, 16, 32, 64, 128, 256)

EXP3_PAIRS = [
    (f"retrain_every_new_best_q{q}", f"retrain_end_q{q}") for q in RETRAIN_LEVELS
]
EXP3_PROBABILITY_ARMS = [f"single_phase_q{q}" for q in QUANTITY_LEVELS]
# standard single-phase run every reduced arm of exp2 is measured against
EXP2_BASELINE = "single_phase_q100"

REQUIRED_ARMS: Dict[Experiment, List[str]] = {
    Experiment.EXP1: ["single_phase_q100", "single_phase_q25", "retrain_end_q25"],
    Experiment.EXP2: [EXP2_BASELINE]
    + [f"retrain_end_q{q}" for q in RETRAIN_LEVELS]
    + [f"retrain_end_l{q}" for q in RETRAIN_LEVELS],
    Experiment.EXP3: [arm for pair in EXP3_PAIRS for arm in pair] + EXP3_PROBABILITY_ARMS,
    Experiment.EXP4: [f"single_phase_q{q}" for q in QUANTITY_LEVELS],
    Experiment.TUNE: [f"tune_e{e}" for e in TUNE_EPISODES],
}


class AnalyzeExperimentResponse(BaseModel):
    """
    Files written by an analysis and the lines of its text summary.
    """

    experiment: Experiment
    files: List[str]
    summary: List[str]


def _missing_logs(
    out_dir: Path, config: ExperimentConfig, arms: Sequence[str]
) -> List[str]:
    missing = []
    for arm in arms:
        for seed in config.seeds():
            path = out_dir / log_filename(arm, seed)
            if arm not in config.arms or not path.exists():
                missing.append(str(path))
            elif not is_complete(path):
                missing.append(f"{path} (incomplete)")
    return missing


def load_arm_logs(
    out_dir: Path, config: ExperimentConfig, arms: Sequence[str]
) -> Dict[str, List[RunLog]]:
    """
    Loads every repetition of the given arms, or raises listing every log that is
    absent or unfinished. Nothing is loaded unless all of them are there.
    """
    missing = _missing_logs(out_dir, config, arms)
    if missing:
        raise MissingArtifactError(
            f"{len(missing)} run logs are missing or incomplete: " + ", ".join(missing),
            missing,
        )
    return {
        arm: [
            read_runlog(out_dir / log_filename(arm, seed), config.arms[arm].kind.value)
            for seed in config.seeds()
        ]
        for arm in dict.fromkeys(arms)
    }


class _Analysis:
    def __init__(self, out_dir: Path, config: ExperimentConfig, experiment: Experiment):
        self.out_dir = out_dir
        self.config = config
        self.experiment = experiment
        self.env = config.environment()
        self.grid = config.checkpoint_grid()
        self.rng = np.random.default_rng(0)
        self.files: List[str] = []
        self.lines: List[str] = []

    def anytime_values(self, arm: str, log: RunLog) -> List[float]:
        """
        Objective the arm would report if its budget ended at each checkpoint.
        """
        if self.config.arms[arm].kind == ScheduleKind.RETRAIN_END:
            schedule = self.config.schedule_config(arm, log.master_seed)
            return retrain_end_curve(log, schedule, self.grid, self.env)
        return objective_values(log, self.grid)

    def curve(self, arm: str, logs: Sequence[RunLog]) -> CurveBundle:
        return summarize(
            arm,
            self.grid,
            [str(log.master_seed) for log in logs],
            [self.anytime_values(arm, log) for log in logs],
            self.config.confidence,
            self.config.bootstrap_resamples,
            self.rng,
        )

    def final(self, label: str, values: Sequence[float]) -> FinalSummary:
        finite = [v for v in values if math.isfinite(v)]
        if len(finite) < len(values):
            logger.warning(
                "%s: %d runs without a finite final objective left out",
                label,
                len(values) - len(finite),
            )
        if not finite:
            nan = math.nan
            return FinalSummary(label=label, n=0, mean=nan, median=nan, lower=nan, upper=nan)
        return final_summary(
            label,
            finite,
            self.config.confidence,
            self.config.bootstrap_resamples,
            self.rng,
        )

    def final_objectives(self, logs: Sequence[RunLog]) -> List[float]:
        return [log.final.objective for log in logs]

    def describe(self, summary: FinalSummary) -> str:
        return (
            f"{summary.label}: mean {summary.mean:.4f} "
            f"[{summary.lower:.4f}, {summary.upper:.4f}] "
            f"median {summary.median:.4f} (n={summary.n})"
        )

    def write_curves(self, name: str, bundles: Sequence[CurveBundle]) -> None:
        path = self.out_dir / f"{self.experiment.value}_{name}.csv"
        write_curves_csv(path, bundles)
        self.files.append(str(path))

    def write_summary(self) -> None:
        path = self.out_dir / f"{self.experiment.value}_summary.txt"
        path.write_text("\n".join(self.lines) + "\n")
        self.files.append(str(path))


def _exp1(analysis: _Analysis, logs: Dict[str, List[RunLog]]) -> None:
    bundles = [analysis.curve(arm, arm_logs) for arm, arm_logs in logs.items()]
    analysis.write_curves("objective", bundles)
    finals = [
        analysis.final(arm, analysis.final_objectives(arm_logs))
        for arm, arm_logs in logs.items()
    ]
    ranked = sorted(finals, key=lambda s: s.mean, reverse=True)
    analysis.lines.append(
        "final objective means in dominance order: "
        + " >= ".join(f"{s.label} ({s.mean:.4f})" for s in ranked)
    )
    analysis.lines.extend(analysis.describe(s) for s in finals)
    two_phase = analysis.final_objectives(logs["retrain_end_q25"])
    standard = analysis.final_objectives(logs["single_phase_q100"])
    paired = analysis.final(
        "retrain_end_q25 - single_phase_q100",
        [a - b for a, b in zip(two_phase, standard)],
    )
    analysis.lines.append("paired difference " + analysis.describe(paired))


def _exp2(analysis: _Analysis, logs: Dict[str, List[RunLog]]) -> None:
    bundles = [analysis.curve(arm, arm_logs) for arm, arm_logs in logs.items()]
    analysis.write_curves("objective", bundles)
    for arm, arm_logs in logs.items():
        summary = analysis.final(arm, analysis.final_objectives(arm_logs))
        flags = [_phase1_best_cheats(log, analysis.env) for log in arm_logs]
        analysis.lines.append(
            f"{analysis.describe(summary)}, cheating designs {sum(flags)}/{len(flags)}"
        )
    for q in RETRAIN_LEVELS:
        quantity = np.mean(analysis.final_objectives(logs[f"retrain_end_q{q}"]))
        length = np.mean(analysis.final_objectives(logs[f"retrain_end_l{q}"]))
        relation = ">" if quantity > length else "<="
        analysis.lines.append(
            f"reduction {q / 100:g}: reduced quantity {quantity:.4f} {relation} "
            f"reduced length {length:.4f}"
        )
    baseline = analysis.final_objectives(logs[EXP2_BASELINE])
    for arm, arm_logs in logs.items():
        if arm == EXP2_BASELINE:
            continue
        paired = analysis.final(
            f"{arm} - {EXP2_BASELINE}",
            [a - b for a, b in zip(analysis.final_objectives(arm_logs), baseline)],
        )
        analysis.lines.append("baseline difference " + analysis.describe(paired))


def _phase1_best_cheats(log: RunLog, env: LocomotionEnvironment) -> bool:
    """
    Whether the last phase-1 incumbent of a run scores by stretching rather than
    walking, judged under the episode length it was selected with.
    """
    rows = [
        row
        for row in log.by_event(RunEvent.NEW_BEST)
        if row.payload and math.isfinite(row.objective)
    ]
    if not rows:
        return False
    payload = from_payload(rows[-1].payload)
    report = detect_cheating(
        payload.genome, payload.controller, payload.episode_steps, env
    )
    return report.flagged


def _exp3(analysis: _Analysis, logs: Dict[str, List[RunLog]]) -> None:
    differences = []
    for every, end in EXP3_PAIRS:
        a = analysis.curve(every, logs[every])
        b = analysis.curve(end, logs[end])
        shared = common_checkpoints([a.checkpoints, b.checkpoints])
        diff = difference_curve(
            restrict(a, shared),
            restrict(b, shared),
            f"{every} - {end}",
            analysis.config.confidence,
            analysis.config.bootstrap_resamples,
            analysis.rng,
        )
        differences.append(diff)
        final = diff.final()
        if final is None:
            analysis.lines.append(f"{diff.label}: no checkpoint where every run has a value")
        else:
            analysis.lines.append(
                f"{diff.label} at {diff.checkpoints[-1]} steps: mean {final[0]:.4f} "
                f"[{final[1]:.4f}, {final[2]:.4f}]"
            )
    analysis.write_curves("difference", differences)

    path = analysis.out_dir / f"{analysis.experiment.value}_improvement.csv"
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["checkpoint", "probability", "series"])
        for arm in EXP3_PROBABILITY_ARMS:
            schedule = analysis.config.schedule_config(arm, analysis.config.seed_offset)
            curve = improvement_probability(
                logs[arm],
                schedule.retrain_budget,
                analysis.grid,
                analysis.config.controller_algorithm,
                analysis.env,
            )
            for t, p in curve:
                writer.writerow([t, repr(p), arm])
            if curve:
                analysis.lines.append(
                    f"{arm}: improvement probability {curve[-1][1]:.4f} at {curve[-1][0]} steps"
                )
    analysis.files.append(str(path))


def _exp4(analysis: _Analysis, logs: Dict[str, List[RunLog]]) -> None:
    bundles = []
    for arm, arm_logs in logs.items():
        bundle = complexity_curve(
            arm_logs,
            analysis.grid,
            arm,
            analysis.config.confidence,
            analysis.config.bootstrap_resamples,
            analysis.rng,
        )
        bundles.append(bundle)
        summary = analysis.final(
            arm, [float(log.final.complexity) for log in arm_logs]
        )
        analysis.lines.append(
            f"{arm} (reduced quantity {analysis.config.arms[arm].reduced_quantity:g}) "
            f"final complexity: mean {summary.mean:.2f} "
            f"[{summary.lower:.2f}, {summary.upper:.2f}]"
        )
    analysis.write_curves("complexity", bundles)


def _tune(analysis: _Analysis, logs: Dict[str, List[RunLog]]) -> None:
    bundles = [analysis.curve(arm, arm_logs) for arm, arm_logs in logs.items()]
    analysis.write_curves("objective", bundles)
    finals = [
        analysis.final(arm, analysis.final_objectives(arm_logs))
        for arm, arm_logs in logs.items()
    ]
    analysis.lines.extend(analysis.describe(s) for s in finals)
    best = max(finals, key=lambda s: (s.median, s.mean))
    episodes = analysis.config.arms[best.label].base_episodes
    analysis.lines.append(
        f"best episodes per design: {episodes or analysis.config.base_episodes} "
        f"({best.label}, median {best.median:.4f})"
    )


_REPORTS = {
    Experiment.EXP1: _exp1,
    Experiment.EXP2: _exp2,
    Experiment.EXP3: _exp3,
    Experiment.EXP4: _exp4,
    Experiment.TUNE: _tune,
}


async def analyzeExperiment(
    out_dir: str, experiment: Experiment
) -> AnalyzeExperimentResponse:
    """
    Turns the run logs of a finished experiment into plot-ready curve CSVs and a
    text summary. Run logs are only read.

    Args:
        out_dir (str): Directory written by runExperiment (holds experiment.json).
        experiment (Experiment): Which comparison to report.

    Returns:
        AnalyzeExperimentResponse: Paths of the written files and the summary lines.

    Raises:
        MissingArtifactError: If any required run log is absent or unfinished; no
        report file is written then.
    """
    experiment = Experiment(experiment)
    path = Path(out_dir)
    config = read_manifest(path)
    logs = load_arm_logs(path, config, REQUIRED_ARMS[experiment])
    analysis = _Analysis(path, config, experiment)
    _REPORTS[experiment](analysis, logs)
    analysis.write_summary()
    logger.info("%s report written to %s", experiment.value, path)
    return AnalyzeExperimentResponse(
        experiment=experiment, files=analysis.files, summary=analysis.lines
    )
