"""Effectiveness measurement: confusion counts, recall/precision, F-measure.

Zero-denominator convention throughout: a measure whose denominator is
empty is 0, never an error, so a failing classifier mid-experiment still
produces a full results row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

__all__ = [
    "ConfusionCounts",
    "EffectivenessReport",
    "RunAggregate",
    "EvaluationError",
    "confusion",
    "recall",
    "precision",
    "f_measure",
    "effectiveness",
    "aggregate_runs",
    "evaluation_schedule",
    "RESULTS_CSV_HEADER",
    "results_csv_row",
]

RESULTS_CSV_HEADER = "category,strategy,run,labeled_count,iteration,tp,fp,fn,tn,recall,precision,f1"


class EvaluationError(Exception):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class EffectivenessReport:
    recall: float
    precision: float
    f_beta: float
    beta: float
    counts: ConfusionCounts


def confusion(decisions: Mapping[str, bool], truth: Mapping[str, bool]) -> ConfusionCounts:
    """Exact confusion counts; the two maps must cover the same doc_ids."""
    if set(decisions) != set(truth):
        raise EvaluationError("decisions and truth must cover identical doc_ids")
    tp = fp = fn = tn = 0
    for doc_id, decided in decisions.items():
        actual = truth[doc_id]
        if decided and actual:
            tp += 1
        elif decided and not actual:
            fp += 1
        elif not decided and actual:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def recall(counts: ConfusionCounts) -> float:
    denom = counts.tp + counts.fn
    return counts.tp / denom if denom else 0.0


def precision(counts: ConfusionCounts) -> float:
    denom = counts.tp + counts.fp
    return counts.tp / denom if denom else 0.0


def f_measure(recall_value: float, precision_value: float, beta: float = 1.0) -> float:
    """Weighted recall-precision combination, higher is better.

    beta = 1 weighs both equally and reduces to the harmonic mean.
    """
    if beta <= 0:
        raise EvaluationError(f"beta must be positive, got {beta}")
    denom = beta * beta * precision_value + recall_value
    if denom == 0.0:
        return 0.0
    return (beta * beta + 1.0) * precision_value * recall_value / denom


def effectiveness(
    decisions: Mapping[str, bool], truth: Mapping[str, bool], beta: float = 1.0
) -> EffectivenessReport:
    counts = confusion(decisions, truth)
    r = recall(counts)
    p = precision(counts)
    return EffectivenessReport(recall=r, precision=p, f_beta=f_measure(r, p, beta), beta=beta, counts=counts)


@dataclass(frozen=True)
class RunAggregate:
    mean: float
    sd: float
    n: int

    @property
    def single_run(self) -> bool:
        return self.n < 2


def aggregate_runs(values: Sequence[float]) -> RunAggregate:
    """Mean and sample (n-1) standard deviation across runs."""
    if not values:
        raise EvaluationError("no runs to aggregate")
    n = len(values)
    mean = sum(values) / n
    if n == 1:
        return RunAggregate(mean=mean, sd=0.0, n=1)
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return RunAggregate(mean=mean, sd=math.sqrt(var), n=n)


def evaluation_schedule(iterations: int) -> list[int]:
    """Iterations to evaluate: 0-10, every 5th after, plus the last.

    Iteration 0 is the initial classifier, flagged by its index.
    """
    points = set(range(0, min(10, iterations) + 1))
    points.update(range(15, iterations + 1, 5))
    points.add(iterations)
    return sorted(points)


def results_csv_row(
    category: str,
    strategy: str,
    run: int,
    labeled_count: int,
    iteration: int,
    report: EffectivenessReport,
) -> str:
    c = report.counts
    return (
        f"{category},{strategy},{run},{labeled_count},{iteration},"
        f"{c.tp},{c.fp},{c.fn},{c.tn},{report.recall!r},{report.precision!r},{report.f_beta!r}"
    )
