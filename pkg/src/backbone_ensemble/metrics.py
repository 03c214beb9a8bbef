"""Accuracy, correctness masks, the Oracle bound, diversity and overlap tables."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateInput,
    EmptyList,
    EmptyMatrix,
    EmptyUnion,
    LengthMismatch,
    TooManyBackbones,
    ZeroBaseline,
)

MAX_OVERLAP_BACKBONES = 16


def top1(logits) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest class index."""
    z = np.asarray(logits)
    if z.ndim != 2 or z.shape[0] == 0 or z.shape[1] == 0:
        raise EmptyMatrix(f"expected a non-empty N x C matrix, got shape {z.shape}")
    return np.argmax(z, axis=1)


def _check_lengths(n, labels):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise LengthMismatch(f"{n} rows but {labels.shape} labels")
    return labels


def correctness(logits, labels) -> np.ndarray:
    """Boolean mask: True where the top-1 prediction equals the label."""
    pred = top1(logits)
    return pred == _check_lengths(len(pred), labels)


def accuracy(logits, labels) -> float:
    return float(np.mean(correctness(logits, labels)))


def prediction_accuracy(preds, labels) -> float:
    """Accuracy of an already-decoded label vector."""
    preds = np.asarray(preds)
    return float(np.mean(preds == _check_lengths(len(preds), labels)))


def stack_masks(masks) -> np.ndarray:
    masks = [np.asarray(m, dtype=bool) for m in masks]
    if not masks:
        raise EmptyList("at least one correctness mask is required")
    if len({m.shape for m in masks}) != 1 or masks[0].ndim != 1:
        raise LengthMismatch("masks must be 1-D and of equal length")
    return np.stack(masks)


def oracle_accuracy(masks) -> float:
    """Fraction of examples that at least one backbone gets right."""
    return float(np.mean(stack_masks(masks).any(axis=0)))


def diversity(masks) -> float:
    """``1 - |all correct| / |any correct|`` over the backbones' correct sets."""
    m = stack_masks(masks)
    if m.shape[0] < 2:
        raise EmptyList("diversity needs at least two masks")
    union = int(m.any(axis=0).sum())
    if union == 0:
        raise EmptyUnion("no example is predicted correctly by any backbone")
    inter = int(m.all(axis=0).sum())
    return 1.0 - inter / union


@dataclass
class OverlapTable:
    """Counts of examples correct by exactly a given subset of backbones.

    ``counts`` maps a sorted tuple of backbone indices to its count; every
    non-empty subset is present, including zero counts.
    """

    names: list
    counts: dict
    totals: list
    union: int
    intersection: int

    def label(self, subset) -> str:
        return "+".join(self.names[i] for i in subset)

    def exclusive(self, b: int) -> int:
        return self.counts[(b,)]

    def rows(self):
        """``(subset label, count)`` pairs, by subset size then index order."""
        return [(self.label(s), c) for s, c in self.counts.items()]

    def to_csv(self) -> str:
        return "".join(f"{label};{count}\n" for label, count in self.rows())

    def to_dict(self) -> dict:
        return {
            "backbones": list(self.names),
            "subsets": [{"subset": [self.names[i] for i in s], "count": c}
                        for s, c in self.counts.items()],
            "totals": dict(zip(self.names, self.totals)),
            "union": self.union,
            "intersection": self.intersection,
        }


def overlap_table(masks, names=None) -> OverlapTable:
    m = stack_masks(masks)
    n_b = m.shape[0]
    if n_b > MAX_OVERLAP_BACKBONES:
        raise TooManyBackbones(f"{n_b} backbones; overlap tables cap at {MAX_OVERLAP_BACKBONES}")
    names = list(names) if names is not None else [str(i) for i in range(n_b)]
    # encode each example's correct set as a bitmask, then histogram
    codes = (m.astype(np.int64) << np.arange(n_b)[:, None]).sum(axis=0)
    hist = np.bincount(codes, minlength=1 << n_b)
    counts = {}
    for size in range(1, n_b + 1):
        for subset in itertools.combinations(range(n_b), size):
            code = sum(1 << i for i in subset)
            counts[subset] = int(hist[code])
    return OverlapTable(
        names=names,
        counts=counts,
        totals=[int(x) for x in m.sum(axis=1)],
        union=int(m.any(axis=0).sum()),
        intersection=int(m.all(axis=0).sum()),
    )


def relative_improvement(method_acc, best_single_acc) -> float:
    if best_single_acc <= 0:
        raise ZeroBaseline("best single accuracy must be positive")
    return (method_acc - best_single_acc) / best_single_acc


def pearson(xs, ys) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch("pearson needs two 1-D vectors of equal length")
    if len(x) < 2:
        raise DegenerateInput("pearson needs at least two points")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateInput("pearson is undefined for a constant vector")
    dx = x - x.mean()
    dy = y - y.mean()
    r = float(dx @ dy) / np.sqrt(float(dx @ dx) * float(dy @ dy))
    return float(np.clip(r, -1.0, 1.0))
