"""Metrics, confusion matrices, scenario regrouping, and the voting study.

Multi-class precision/recall/F1 are macro-averaged; classes with zero support
are excluded from the macro averages and reported in `excluded_classes` so
either convention can be read off the per-class values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import StructuralError
from .voting import PairPrediction, RoomProbability, decide, merge_tx, vote_tx

SCENARIO_CLASSES = {1: 2, 2: 2, 3: 4}


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[i][j] = number of samples with true class i predicted as j."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise StructuralError(f"confusion matrix must be square, got {c.shape}")
        if (c < 0).any():
            raise StructuralError("confusion matrix counts must be nonnegative")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)


@dataclass(frozen=True)
class MetricReport:
    accuracy: float
    precision: np.ndarray  # per class
    recall: np.ndarray
    f1: np.ndarray
    macro_precision: float
    macro_recall: float
    macro_f1: float
    excluded_classes: tuple[int, ...] = ()


def confusion(preds: np.ndarray, labels: np.ndarray, n_classes: int) -> ConfusionMatrix:
    """Count (true, predicted) pairs; class indices are 0-based."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise StructuralError(f"length mismatch: {preds.shape} vs {labels.shape}")
    if preds.size and (min(preds.min(), labels.min()) < 0
                       or max(preds.max(), labels.max()) >= n_classes):
        raise StructuralError(f"class index out of range for n_classes={n_classes}")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts)


def metrics(cm: ConfusionMatrix) -> MetricReport:
    c = cm.counts
    total = c.sum()
    if total == 0:
        raise StructuralError("metrics of an empty confusion matrix")
    diag = np.diag(c).astype(np.float64)
    support = c.sum(axis=1).astype(np.float64)
    predicted = c.sum(axis=0).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, diag / predicted, 0.0)
        recall = np.where(support > 0, diag / support, 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2 * precision * recall / np.where(pr > 0, pr, 1.0), 0.0)
    included = support > 0
    excluded = tuple(int(i) for i in np.flatnonzero(~included))
    return MetricReport(
        accuracy=float(diag.sum() / total),
        precision=precision, recall=recall, f1=f1,
        macro_precision=float(precision[included].mean()),
        macro_recall=float(recall[included].mean()),
        macro_f1=float(f1[included].mean()),
        excluded_classes=excluded,
    )


def regroup_scenario(preds4: np.ndarray, labels4: np.ndarray,
                     scenario: int) -> tuple[np.ndarray, np.ndarray]:
    """Regroup 4-case values (1..4) into a benchmark scenario's classes.

    Scenario 1 keeps samples labeled empty / presence-in-TX and maps them to
    binary TX occupancy (a prediction of case 2 or 4 counts as presence).
    Scenario 2 keeps empty / both-occupied samples as binary any-presence.
    Scenario 3 is the 4-class identity. Returned classes are 0-based.
    """
    preds4 = np.asarray(preds4, dtype=np.int64)
    labels4 = np.asarray(labels4, dtype=np.int64)
    if preds4.shape != labels4.shape:
        raise StructuralError("prediction/label length mismatch")
    if scenario == 3:
        return preds4 - 1, labels4 - 1
    if scenario == 1:
        keep = (labels4 == 1) | (labels4 == 2)
        tx_of = np.array([0, 0, 1, 0, 1])  # case -> TX occupied
        return tx_of[preds4[keep]], tx_of[labels4[keep]]
    if scenario == 2:
        keep = (labels4 == 1) | (labels4 == 4)
        any_of = np.array([0, 0, 1, 1, 1])  # case -> any room occupied
        return any_of[preds4[keep]], any_of[labels4[keep]]
    raise StructuralError(f"unknown scenario {scenario}; expected 1, 2, or 3")


@dataclass(frozen=True)
class VotingReport:
    per_pair_accuracy: tuple[float, ...]
    voted_accuracy: float

    @property
    def gain_over_mean(self) -> float:
        return self.voted_accuracy - float(np.mean(self.per_pair_accuracy))

    @property
    def gain_over_worst(self) -> float:
        return self.voted_accuracy - min(self.per_pair_accuracy)


def voting_ablation(pair_probs: dict[int, np.ndarray],
                    tx_labels: np.ndarray) -> VotingReport:
    """TX-room accuracy from each pair alone vs after the probability vote.

    pair_probs maps pair_id -> (N, 4) aligned case probabilities; tx_labels
    holds the N binary TX-room occupancy truths.
    """
    if len(pair_probs) < 2:
        raise StructuralError("voting study needs at least two transmission pairs")
    tx_labels = np.asarray(tx_labels, dtype=np.int64)
    n = len(tx_labels)
    per_pair = []
    merged_all = []
    for pid in sorted(pair_probs):
        probs = np.asarray(pair_probs[pid], dtype=np.float64)
        if probs.shape != (n, 4):
            raise StructuralError(f"pair {pid}: probabilities {probs.shape} != ({n}, 4)")
        merged = np.stack([probs[:, 0] + probs[:, 2], probs[:, 1] + probs[:, 3]], axis=1)
        merged_all.append(merged)
        per_pair.append(float(((merged[:, 1] >= merged[:, 0]).astype(int) == tx_labels).mean()))
    voted = np.mean(merged_all, axis=0)
    voted_acc = float(((voted[:, 1] >= voted[:, 0]).astype(int) == tx_labels).mean())
    return VotingReport(per_pair_accuracy=tuple(per_pair), voted_accuracy=voted_acc)


def format_metric_table(title: str, reports: dict[str, MetricReport]) -> str:
    """Fixed-width text table of accuracy / macro precision / recall / F1."""
    lines = [title, "-" * len(title),
             f"{'group':<24}{'accuracy':>10}{'precision':>11}{'recall':>9}{'f1':>9}"]
    for name, r in reports.items():
        lines.append(f"{name:<24}{r.accuracy:>10.4f}{r.macro_precision:>11.4f}"
                     f"{r.macro_recall:>9.4f}{r.macro_f1:>9.4f}")
    return "\n".join(lines) + "\n"
