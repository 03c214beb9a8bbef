"""n-shot sampling, stratified holdout splits and per-backbone linear probes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._nn import cross_entropy
from ._optim import Adam
from .errors import EmptyClassSet, NonFiniteLoss, ShapeMismatch


@dataclass
class ShotSample:
    shots: int
    seed: int
    indices: np.ndarray


def sample_shots(labels, n, seed) -> ShotSample:
    """Draw ``n`` examples per class without replacement (all of a smaller class)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    labels = np.asarray(labels)
    if labels.size == 0:
        raise EmptyClassSet("no labelled examples to sample from")
    rng = np.random.default_rng(seed)
    picked = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        k = min(n, len(members))
        picked.append(rng.choice(members, size=k, replace=False))
    return ShotSample(n, seed, np.sort(np.concatenate(picked)))


def holdout_split(indices, labels, fraction, seed):
    """Stratified split of ``indices`` into ``(fit, holdout)``.

    Each class sends ``ceil(fraction * count)`` examples to the holdout,
    capped so the fit set keeps at least one; singleton classes stay in fit.
    ``labels`` is indexed by the values in ``indices``.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    indices = np.asarray(indices)
    sub = np.asarray(labels)[indices]
    rng = np.random.default_rng(seed)
    fit, hold = [], []
    for c in np.unique(sub):
        members = indices[sub == c]
        count = len(members)
        k = 0
        if count >= 2:
            # guard against 0.1 * 30 == 3.0000000000000004
            k = min(math.ceil(fraction * count - 1e-9), count - 1)
            k = max(k, 1)
        perm = rng.permutation(members)
        hold.append(perm[:k])
        fit.append(perm[k:])
    cat = lambda parts: np.sort(np.concatenate(parts)) if parts else np.array([], dtype=np.int64)  # noqa: E731
    return cat(fit), cat(hold)


def l2_normalize(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norm > 0, norm, 1.0)


@dataclass
class ProbeConfig:
    learning_rate: float = 1e-3
    epochs: int = 100


@dataclass
class LinearProbe:
    W: np.ndarray  # classes x dim
    b: np.ndarray
    history: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"type": "probe", "W": self.W.tolist(), "b": self.b.tolist(), "meta": dict(self.meta)}

    @classmethod
    def from_dict(cls, doc) -> "LinearProbe":
        return cls(np.array(doc["W"], dtype=np.float64), np.array(doc["b"], dtype=np.float64),
                   meta=dict(doc.get("meta", {})))


def probe_loss_grad(W, b, x, labels):
    """Cross-entropy of softmax regression on already-normalized ``x``."""
    loss, g = cross_entropy(x @ W.T + b, np.asarray(labels))
    return loss, {"W": g.T @ x, "b": g.sum(axis=0)}


def probe_fit(features, labels, num_classes, init=None, cfg: ProbeConfig | None = None) -> LinearProbe:
    """Full-batch Adam softmax regression on L2-normalized features.

    ``init`` is an optional C x D weight matrix (e.g. text-embedding class
    weights); zeros otherwise.
    """
    cfg = cfg or ProbeConfig()
    x = l2_normalize(features)
    d = x.shape[1]
    if init is None:
        W = np.zeros((num_classes, d))
    else:
        W = np.array(init, dtype=np.float64)
        if W.shape != (num_classes, d):
            raise ShapeMismatch(f"init has shape {W.shape}, expected {(num_classes, d)}")
    params = {"W": W, "b": np.zeros(num_classes)}
    opt = Adam(params, lr=cfg.learning_rate)
    history = []
    for epoch in range(cfg.epochs):
        loss, grads = probe_loss_grad(params["W"], params["b"], x, labels)
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"probe loss diverged at epoch {epoch}")
        history.append(loss)
        opt.step(grads)
    return LinearProbe(params["W"], params["b"], history)


def probe_logits(probe: LinearProbe, features) -> np.ndarray:
    x = l2_normalize(features)
    if x.shape[1] != probe.W.shape[1]:
        raise ShapeMismatch(f"features have width {x.shape[1]}, probe expects {probe.W.shape[1]}")
    return x @ probe.W.T + probe.b
