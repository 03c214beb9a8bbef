"""Softmax and entropy primitives and the non-parametric combiners.

A *stack* is any sequence of B aligned N x C logit matrices; it is handled
internally as a float64 array of shape (B, N, C).
"""
from __future__ import annotations

import numpy as np

from .errors import (
    EmptyList,
    NonPositiveTemperature,
    NotADistribution,
    ShapeMismatch,
    TooFewClasses,
)

VOTE3_WEIGHTS = (3.0, 2.0, 1.0)


def as_stack(stack) -> np.ndarray:
    if isinstance(stack, np.ndarray):
        arr = stack.astype(np.float64, copy=False)
    else:
        blocks = [np.asarray(s) for s in stack]
        if not blocks:
            raise EmptyList("a logit stack needs at least one backbone")
        if len({b.shape for b in blocks}) != 1:
            raise ShapeMismatch(f"stack blocks differ in shape: {[b.shape for b in blocks]}")
        arr = np.stack(blocks).astype(np.float64, copy=False)
    if arr.ndim != 3 or 0 in arr.shape:
        raise ShapeMismatch(f"expected a non-empty (B, N, C) stack, got shape {arr.shape}")
    return arr


def softmax(z, t=1.0, axis=-1) -> np.ndarray:
    """``softmax(z / t)`` along ``axis``, with max subtraction."""
    if not np.all(np.asarray(t) > 0):
        raise NonPositiveTemperature(f"temperature must be > 0, got {t}")
    s = np.asarray(z, dtype=np.float64) / t
    s = s - s.max(axis=axis, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z, axis=-1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    s = z - z.max(axis=axis, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=axis, keepdims=True))


def shannon_entropy(p, axis=-1) -> np.ndarray:
    """Entropy in nats, with ``0 ln 0 = 0``."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=axis) - 1.0) > 1e-6):
        raise NotADistribution("entries must be non-negative and sum to 1")
    logp = np.log(np.where(p > 0, p, 1.0))
    h = -(p * logp).sum(axis=axis)
    return h + 0.0  # avoid -0.0 for one-hot rows


def zscore(stack) -> np.ndarray:
    """Standardize each backbone's logits to zero mean and unit variance.

    Meant for exporters whose backbones emit logits on different scales;
    constant blocks are only centred.
    """
    z = as_stack(stack)
    mu = z.mean(axis=(1, 2), keepdims=True)
    sd = z.std(axis=(1, 2), keepdims=True)
    return (z - mu) / np.where(sd > 0, sd, 1.0)


def log_avg(stack) -> np.ndarray:
    return as_stack(stack).mean(axis=0)


def _resolve(scores, support):
    """Per-row winner among the max-score classes.

    ``support[i, c]`` is the tie-break score of class ``c``; remaining ties go
    to the lowest class index.
    """
    best = scores.max(axis=1, keepdims=True)
    tied = scores == best
    key = np.where(tied, support, -np.inf)
    return np.argmax(key, axis=1)


def _vote(z, ranks_weights):
    n_b, n, c = z.shape
    probs = softmax(z)
    order = np.argsort(-z, axis=2, kind="stable")
    scores = np.zeros((n, c))
    support = np.full((n, c), -np.inf)
    rows = np.arange(n)
    for b in range(n_b):
        for rank, w in enumerate(ranks_weights):
            cls = order[b, :, rank]
            scores[rows, cls] += w
            support[rows, cls] = np.maximum(support[rows, cls], probs[b, rows, cls])
    return _resolve(scores, support)


def vote_top1(stack) -> np.ndarray:
    """Majority vote of per-backbone top-1 predictions.

    Vote ties go to the tied class backed by the single most confident voter
    (largest softmax probability), then to the lowest class index.
    """
    return _vote(as_stack(stack), (1.0,))


def vote_top3(stack) -> np.ndarray:
    """Position-weighted vote over each backbone's top-3 classes (weights 3, 2, 1).

    Ties use the same rule as :func:`vote_top1`, where a backbone supports a
    class if the class is in its top 3.
    """
    z = as_stack(stack)
    if z.shape[2] < 3:
        raise TooFewClasses(f"vote_top3 needs at least 3 classes, got {z.shape[2]}")
    return _vote(z, VOTE3_WEIGHTS)


def confidence_select(stack) -> np.ndarray:
    """Top-1 prediction of the lowest-entropy backbone for each example."""
    z = as_stack(stack)
    h = shannon_entropy(softmax(z))  # (B, N)
    chosen = np.argmin(h, axis=0)
    preds = np.argmax(z, axis=2)  # (B, N)
    return preds[chosen, np.arange(z.shape[1])]
