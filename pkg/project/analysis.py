import csv
import logging
import math
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from project.engine import RunEvent, RunLog, RunLogRow, ScheduleKind
from project.errors import ContractViolationError
from pydantic import BaseModel, Field, model_validator

logger = logging.getLogger(__name__)

DEFAULT_RESAMPLES = 10_000
DEFAULT_CONFIDENCE = 0.95
CHECKPOINT_COUNT = 64
FIRST_CHECKPOINT = 1_000


class CurveBundle(BaseModel):
    """
    Per-run values of a quantity at a grid of step counts, plus the mean and its
    bootstrap confidence band at every checkpoint.
    """

    label: str = ""
    checkpoints: List[int]
    runs: List[str] = Field(default_factory=list)
    values: List[List[float]] = Field(default_factory=list)
    mean: List[float] = Field(default_factory=list)
    lower: List[float] = Field(default_factory=list)
    upper: List[float] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_shape(self) -> "CurveBundle":
        if any(b <= a for a, b in zip(self.checkpoints, self.checkpoints[1:])):
            raise ValueError("checkpoints must be strictly increasing")
        for lo, m, hi in zip(self.lower, self.mean, self.upper):
            if not lo <= m <= hi:
                raise ValueError(f"confidence band [{lo}, {hi}] does not contain {m}")
        return self

    def final(self) -> Optional[Tuple[float, float, float]]:
        if not self.mean:
            return None
        return self.mean[-1], self.lower[-1], self.upper[-1]


class FinalSummary(BaseModel):
    label: str
    n: int
    mean: float
    median: float
    lower: float
    upper: float


def default_checkpoints(
    max_steps: int, count: int = CHECKPOINT_COUNT, start: int = FIRST_CHECKPOINT
) -> List[int]:
    """
    Log-spaced step counts from start to max_steps (both included), deduplicated
    after rounding.
    """
    if max_steps <= start:
        return [int(max_steps)]
    grid = np.unique(np.round(np.geomspace(start, max_steps, count)).astype(int))
    points = [int(v) for v in grid]
    points[-1] = int(max_steps)
    return points


def bootstrap_ci(
    sample: Sequence[float],
    confidence: float = DEFAULT_CONFIDENCE,
    resamples: int = DEFAULT_RESAMPLES,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[float, float, float]:
    """
    Percentile bootstrap interval for the mean.

    Args:
        sample (Sequence[float]): Observations, at least one.
        confidence (float): Coverage in (0, 1).
        resamples (int): Number of bootstrap resamples.
        rng (Optional[np.random.Generator]): Resampling stream.

    Returns:
        Tuple[float, float, float]: (mean, lower, upper); lower <= mean <= upper.
    """
    data = np.asarray(sample, dtype=float)
    if data.size == 0:
        raise ContractViolationError("bootstrap needs a non-empty sample")
    if not 0 < confidence < 1:
        raise ContractViolationError("confidence must lie strictly between 0 and 1")
    mean = float(np.mean(data))
    if data.size == 1 or np.all(data == data[0]):
        return mean, mean, mean
    rng = rng or np.random.default_rng(0)
    idx = rng.integers(0, data.size, size=(resamples, data.size))
    means = data[idx].mean(axis=1)
    alpha = 1 - confidence
    lower, upper = np.percentile(means, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return mean, min(float(lower), mean), max(float(upper), mean)


def scoring_rows(log: RunLog) -> List[RunLogRow]:
    """
    Rows whose objective is the best-so-far score of a run: reduced-budget new bests
    for single-phase runs, retrained scores for the two-phase schedules.
    """
    if log.schedule == ScheduleKind.SINGLE_PHASE.value:
        return log.by_event(RunEvent.NEW_BEST)
    return log.by_event(RunEvent.RETRAIN)


def _carry_forward(
    rows: Sequence[RunLogRow],
    checkpoints: Sequence[int],
    value: Callable[[RunLogRow], float],
) -> List[float]:
    values = []
    incumbent: Optional[RunLogRow] = None
    i = 0
    for t in checkpoints:
        while i < len(rows) and rows[i].used_steps <= t:
            if incumbent is None or rows[i].objective > incumbent.objective:
                incumbent = rows[i]
            i += 1
        values.append(math.nan if incumbent is None else value(incumbent))
    return values


def objective_values(log: RunLog, checkpoints: Sequence[int]) -> List[float]:
    """
    Best objective among the run's scoring rows logged at or before each checkpoint.
    """
    return _carry_forward(scoring_rows(log), checkpoints, lambda row: row.objective)


def complexity_values(log: RunLog, checkpoints: Sequence[int]) -> List[float]:
    """
    Complexity of the incumbent (best scoring) design at each checkpoint.
    """
    return _carry_forward(scoring_rows(log), checkpoints, lambda row: float(row.complexity))


def summarize(
    label: str,
    checkpoints: Sequence[int],
    runs: Sequence[str],
    values: Sequence[Sequence[float]],
    confidence: float = DEFAULT_CONFIDENCE,
    resamples: int = DEFAULT_RESAMPLES,
    rng: Optional[np.random.Generator] = None,
) -> CurveBundle:
    """
    Bootstrap summary at every checkpoint where all runs have a finite value; other
    checkpoints are dropped.
    """
    rng = rng or np.random.default_rng(0)
    matrix = np.asarray(values, dtype=float).reshape(len(runs), len(checkpoints))
    keep = [j for j in range(len(checkpoints)) if np.all(np.isfinite(matrix[:, j]))]
    bundle = {"mean": [], "lower": [], "upper": []}
    for j in keep:
        m, lo, hi = bootstrap_ci(matrix[:, j], confidence, resamples, rng)
        bundle["mean"].append(m)
        bundle["lower"].append(lo)
        bundle["upper"].append(hi)
    return CurveBundle(
        label=label,
        checkpoints=[int(checkpoints[j]) for j in keep],
        runs=list(runs),
        values=[[float(matrix[r, j]) for j in keep] for r in range(len(runs))],
        **bundle,
    )


def _run_label(log: RunLog) -> str:
    return str(log.master_seed)


def objective_curve(
    logs: Sequence[RunLog],
    checkpoints: Sequence[int],
    label: str = "",
    confidence: float = DEFAULT_CONFIDENCE,
    resamples: int = DEFAULT_RESAMPLES,
    rng: Optional[np.random.Generator] = None,
) -> CurveBundle:
    return summarize(
        label,
        checkpoints,
        [_run_label(log) for log in logs],
        [objective_values(log, checkpoints) for log in logs],
        confidence,
        resamples,
        rng,
    )


def complexity_curve(
    logs: Sequence[RunLog],
    checkpoints: Sequence[int],
    label: str = "",
    confidence: float = DEFAULT_CONFIDENCE,
    resamples: int = DEFAULT_RESAMPLES,
    rng: Optional[np.random.Generator] = None,
) -> CurveBundle:
    """
    Complexity of the best-found design at each computation budget, averaged over runs.
    """
    return summarize(
        label,
        checkpoints,
        [_run_label(log) for log in logs],
        [complexity_values(log, checkpoints) for log in logs],
        confidence,
        resamples,
        rng,
    )


def difference_curve(
    bundle_a: CurveBundle,
    bundle_b: CurveBundle,
    label: str = "",
    confidence: float = DEFAULT_CONFIDENCE,
    resamples: int = DEFAULT_RESAMPLES,
    rng: Optional[np.random.Generator] = None,
) -> CurveBundle:
    """
    Paired per-run differences a - b, summarized like any other curve. Runs are paired
    by label (the master seed).
    """
    if bundle_a.checkpoints != bundle_b.checkpoints:
        raise ContractViolationError("curves have different checkpoints")
    if sorted(bundle_a.runs) != sorted(bundle_b.runs):
        raise ContractViolationError("curves were computed over different runs")
    b_rows = dict(zip(bundle_b.runs, bundle_b.values))
    diffs = [
        [x - y for x, y in zip(row, b_rows[run])]
        for run, row in zip(bundle_a.runs, bundle_a.values)
    ]
    return summarize(
        label or f"{bundle_a.label} - {bundle_b.label}",
        bundle_a.checkpoints,
        bundle_a.runs,
        diffs,
        confidence,
        resamples,
        rng,
    )


def common_checkpoints(
    grids: Iterable[Sequence[int]],
) -> List[int]:
    """
    Checkpoints present in every grid, in increasing order.
    """
    grids = [set(g) for g in grids]
    if not grids:
        return []
    return sorted(set.intersection(*grids))


def restrict(bundle: CurveBundle, checkpoints: Sequence[int]) -> CurveBundle:
    """
    Sub-bundle on a subset of its checkpoints.
    """
    wanted = set(checkpoints)
    keep = [j for j, t in enumerate(bundle.checkpoints) if t in wanted]
    return CurveBundle(
        label=bundle.label,
        checkpoints=[bundle.checkpoints[j] for j in keep],
        runs=bundle.runs,
        values=[[row[j] for j in keep] for row in bundle.values],
        mean=[bundle.mean[j] for j in keep],
        lower=[bundle.lower[j] for j in keep],
        upper=[bundle.upper[j] for j in keep],
    )


def final_summary(
    label: str,
    values: Sequence[float],
    confidence: float = DEFAULT_CONFIDENCE,
    resamples: int = DEFAULT_RESAMPLES,
    rng: Optional[np.random.Generator] = None,
) -> FinalSummary:
    mean, lower, upper = bootstrap_ci(values, confidence, resamples, rng)
    return FinalSummary(
        label=label,
        n=len(values),
        mean=mean,
        median=float(np.median(np.asarray(values, dtype=float))),
        lower=lower,
        upper=upper,
    )


def write_curves_csv(path: Path, bundles: Sequence[CurveBundle]) -> Path:
    """
    Plot-ready CSV with one line per (series, checkpoint).
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["checkpoint", "mean", "lower", "upper", "series"])
        for bundle in bundles:
            for t, m, lo, hi in zip(
                bundle.checkpoints, bundle.mean, bundle.lower, bundle.upper
            ):
                writer.writerow([t, repr(m), repr(lo), repr(hi), bundle.label])
    logger.info("wrote %d curves to %s", len(bundles), path)
    return path
