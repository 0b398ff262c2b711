"""Labeling-function quality and diversity analytics.

Accuracy figures here are accuracy-on-covered: the denominator is the set
of examples the labeler actually voted on. Diversity measures for a pair
of labelers count jointly covered examples by the correctness of each vote
and normalize by the full split size, not by joint coverage.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import ABSTAIN, VoteMatrix, coverage
from .errors import ContractError

#: Coverage below this fraction gets flagged in reports.
LOW_COVERAGE = 0.02


@dataclass(frozen=True)
class ClassBreakdown:
    coverage: float
    accuracy: float | None


@dataclass(frozen=True)
class LFStats:
    name: str
    coverage: float
    accuracy: float | None
    n_covered: int
    polarity: tuple[int, ...]
    per_class: Mapping[int, ClassBreakdown]
    low_coverage: bool


def lf_stats(matrix: VoteMatrix, gold: Sequence[int]) -> list[LFStats]:
    """Coverage and accuracy-on-covered per labeling function."""
    gold = np.asarray(gold, dtype=int)
    if len(gold) != matrix.n:
        raise ContractError(f"{len(gold)} gold labels for {matrix.n} examples")
    values = matrix.values()
    out = []
    for j, name in enumerate(matrix.lf_names):
        col = values[:, j]
        voted = col != ABSTAIN
        n_covered = int(voted.sum())
        cov = coverage(matrix, j)
        accuracy = (
            float((col[voted] == gold[voted]).mean()) if n_covered else None
        )
        emitted = sorted(int(c) for c in np.unique(col[voted]))
        per_class = {}
        for c in emitted:
            votes_c = col == c
            per_class[c] = ClassBreakdown(
                coverage=float(votes_c.mean()) if matrix.n else 0.0,
                accuracy=float((gold[votes_c] == c).mean()),
            )
        out.append(
            LFStats(
                name=name,
                coverage=cov,
                accuracy=accuracy,
                n_covered=n_covered,
                polarity=tuple(emitted),
                per_class=per_class,
                low_coverage=bool(0 < cov < LOW_COVERAGE),
            )
        )
    return out


@dataclass(frozen=True)
class DiversityCounts:
    """Joint-coverage contingency counts for a labeler pair.

    Superscripts denote correctness: n11 counts examples where both votes
    are correct, n10 where only the first is, n01 where only the second
    is, n00 where both are wrong. n_total is the full split size.
    """

    n00: int
    n10: int
    n01: int
    n11: int
    n_total: int

    @property
    def joint_coverage(self) -> int:
        return self.n00 + self.n10 + self.n01 + self.n11


@dataclass(frozen=True)
class DiversityMeasures:
    agreement: float
    disagreement: float
    double_fault: float
    double_correct: float


def diversity_counts(
    matrix: VoteMatrix, gold: Sequence[int], i: int, j: int
) -> DiversityCounts:
    if i == j:
        raise ContractError("diversity needs two distinct labeling functions")
    matrix._check_lf(i)
    matrix._check_lf(j)
    gold = np.asarray(gold, dtype=int)
    if len(gold) != matrix.n:
        raise ContractError(f"{len(gold)} gold labels for {matrix.n} examples")
    values = matrix.values()
    both = (values[:, i] != ABSTAIN) & (values[:, j] != ABSTAIN)
    ci = values[both, i] == gold[both]
    cj = values[both, j] == gold[both]
    return DiversityCounts(
        n00=int((~ci & ~cj).sum()),
        n10=int((ci & ~cj).sum()),
        n01=int((~ci & cj).sum()),
        n11=int((ci & cj).sum()),
        n_total=matrix.n,
    )


def diversity(
    matrix: VoteMatrix, gold: Sequence[int], i: int, j: int
) -> DiversityMeasures:
    """Agreement, disagreement, double fault, and double correct for a
    pair, each normalized by the split size."""
    c = diversity_counts(matrix, gold, i, j)
    total = max(c.n_total, 1)
    return DiversityMeasures(
        agreement=(c.n00 + c.n11) / total,
        disagreement=(c.n10 + c.n01) / total,
        double_fault=c.n00 / total,
        double_correct=c.n11 / total,
    )


MEASURES = ("agreement", "disagreement", "double_fault", "double_correct")


def diversity_matrix(
    matrix: VoteMatrix, gold: Sequence[int], measure: str
) -> np.ndarray:
    if measure not in MEASURES:
        raise ContractError(f"unknown measure {measure!r}; pick from {MEASURES}")
    m = matrix.m
    out = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            value = getattr(diversity(matrix, gold, i, j), measure)
            out[i, j] = out[j, i] = value
    return out


# ---------------------------------------------------------------------------
# Classification metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    accuracy: float
    confusion: ConfusionCounts


def metrics(
    predictions: Sequence[int], gold: Sequence[int], positive_index: int
) -> MetricsReport:
    """Binary precision/recall/F1 for the positive class plus accuracy.

    Zero denominators resolve to 0 (no positive predictions means zero
    precision, no positive gold means zero recall).
    """
    predictions = np.asarray(predictions, dtype=int)
    gold = np.asarray(gold, dtype=int)
    if predictions.shape != gold.shape:
        raise ContractError(
            f"{predictions.shape[0]} predictions vs {gold.shape[0]} gold labels"
        )
    pos_pred = predictions == positive_index
    pos_gold = gold == positive_index
    tp = int((pos_pred & pos_gold).sum())
    fp = int((pos_pred & ~pos_gold).sum())
    fn = int((~pos_pred & pos_gold).sum())
    tn = int((~pos_pred & ~pos_gold).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    accuracy = float((predictions == gold).mean()) if len(gold) else 0.0
    return MetricsReport(
        precision=precision,
        recall=recall,
        f1=f1,
        accuracy=accuracy,
        confusion=ConfusionCounts(tp, fp, fn, tn),
    )


# ---------------------------------------------------------------------------
# Calibration deltas
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationDelta:
    """Calibrated-minus-uncalibrated change for one labeling function.

    Accuracy deltas are None when either side has no covered examples (or
    no votes for the class, in the per-class breakdown).
    """

    name: str
    d_coverage: float
    d_accuracy: float | None
    per_class: Mapping[int, "CalibrationClassDelta"]


@dataclass(frozen=True)
class CalibrationClassDelta:
    d_coverage: float
    d_accuracy: float | None


def calibration_delta_report(
    uncalibrated: VoteMatrix, calibrated: VoteMatrix, gold: Sequence[int]
) -> list[CalibrationDelta]:
    if uncalibrated.lf_names != calibrated.lf_names:
        raise ContractError("matrices cover different labeling functions")
    if uncalibrated.n != calibrated.n:
        raise ContractError("matrices cover different example counts")
    before = lf_stats(uncalibrated, gold)
    after = lf_stats(calibrated, gold)
    deltas = []
    for b, a in zip(before, after):
        classes = sorted(set(b.per_class) | set(a.per_class))
        per_class = {}
        for c in classes:
            cb = b.per_class.get(c, ClassBreakdown(0.0, None))
            ca = a.per_class.get(c, ClassBreakdown(0.0, None))
            d_acc = (
                ca.accuracy - cb.accuracy
                if ca.accuracy is not None and cb.accuracy is not None
                else None
            )
            per_class[c] = CalibrationClassDelta(ca.coverage - cb.coverage, d_acc)
        d_accuracy = (
            a.accuracy - b.accuracy
            if a.accuracy is not None and b.accuracy is not None
            else None
        )
        deltas.append(
            CalibrationDelta(
                name=b.name,
                d_coverage=a.coverage - b.coverage,
                d_accuracy=d_accuracy,
                per_class=per_class,
            )
        )
    return deltas


def sort_by_polarity(stats: Sequence[LFStats]) -> list[int]:
    """Display order for heatmaps: by polarity block, then name."""
    return sorted(
        range(len(stats)), key=lambda idx: (stats[idx].polarity, stats[idx].name)
    )
