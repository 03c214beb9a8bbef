"""Confidence-thresholded cascade over backbones with GFLOPs accounting.

Backbones are evaluated cheapest first. After each one the prefix evaluated
so far is combined, and the example exits as soon as the combined softmax
is confident enough.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calibration import TemperatureVector
from .errors import MissingCombinerState, UnknownBackboneName
from .static import as_stack, softmax

COMBINERS = ("logavg", "c-logavg", "nlc-per-prefix")


@dataclass
class CascadeConfig:
    order: object = "gflops"  # "gflops" or a list of backbone names
    threshold: float = 0.9
    combiner: str = "logavg"
    temps: TemperatureVector | None = None
    prefix_models: list | None = None

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must be in [0, 1]")
        if self.combiner not in COMBINERS:
            raise ValueError(f"combiner must be one of {COMBINERS}")


@dataclass
class CascadeTrace:
    order: list
    prefix_len: np.ndarray
    confidence: np.ndarray
    gflops: np.ndarray
    prediction: np.ndarray
    threshold: float = 0.9
    combiner: str = "logavg"
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "order": list(self.order),
            "threshold": self.threshold,
            "combiner": self.combiner,
            "avg_gflops": cascade_cost(self),
            "examples": [
                {"prefix_len": int(k), "confidence": float(c), "gflops": float(g), "prediction": int(p)}
                for k, c, g, p in zip(self.prefix_len, self.confidence, self.gflops, self.prediction)
            ],
        }


def _order(names, gflops, policy):
    if isinstance(policy, str):
        if policy not in ("gflops", "gflops-ascending"):
            raise ValueError(f"unknown order policy {policy!r}")
        return sorted(range(len(names)), key=lambda i: (gflops[i], names[i]))
    order = []
    for name in policy:
        if name not in names:
            raise UnknownBackboneName(f"unknown backbone {name!r}")
        order.append(names.index(name))
    if sorted(order) != list(range(len(names))):
        raise ValueError("explicit order must be a permutation of the bundle's backbones")
    return order


def order_backbones(bundle, policy="gflops") -> list:
    """Stack indices in evaluation order: ascending GFLOPs (ties by name) or an explicit name list."""
    return _order(bundle.names, list(bundle.gflops), policy)


def cascade_stack(stack, gflops, threshold, combine):
    """Run the cascade on an already-ordered stack.

    ``combine(k)`` returns the N x C combined logits of the first ``k``
    backbones. An example exits at the first prefix whose max softmax
    probability is strictly above ``threshold``, or at the full stack.
    Returns ``(prediction, prefix_len, confidence, cumulative_gflops)``.
    """
    z = as_stack(stack)
    n_b, n, _ = z.shape
    cost = np.cumsum(np.asarray(gflops, dtype=np.float64))
    prefix = np.zeros(n, dtype=np.int64)
    conf = np.zeros(n)
    pred = np.zeros(n, dtype=np.int64)
    open_ = np.ones(n, dtype=bool)
    for k in range(1, n_b + 1):
        logits = combine(k)
        p = softmax(logits)
        c = p.max(axis=1)
        done = open_ & ((c > threshold) | (k == n_b))
        prefix[done] = k
        conf[done] = c[done]
        pred[done] = np.argmax(logits[done], axis=1)
        open_ &= ~done
        if not open_.any():
            break
    return pred, prefix, conf, cost[prefix - 1]


def prefix_combiner(cfg: CascadeConfig, stack, names, features=None):
    """Build ``combine(k)`` for an ordered stack according to ``cfg.combiner``."""
    z = as_stack(stack)
    if cfg.combiner == "logavg":
        return lambda k: z[:k].mean(axis=0)
    if cfg.combiner == "c-logavg":
        if cfg.temps is None:
            raise MissingCombinerState("c-logavg needs fitted temperatures")
        lookup = dict(zip(cfg.temps.names, cfg.temps.temps))
        missing = [n for n in names if n not in lookup]
        if missing:
            raise MissingCombinerState(f"no temperature for {missing}")
        t = np.array([lookup[n] for n in names])
        scaled = z / t[:, None, None]
        return lambda k: scaled[:k].mean(axis=0)
    # nlc-per-prefix
    from .nlc import nlc_logits

    models = cfg.prefix_models
    if not models or len(models) != len(names):
        raise MissingCombinerState("nlc-per-prefix needs one trained controller per prefix")
    if features is None:
        raise MissingCombinerState("nlc-per-prefix needs backbone features")
    for k, m in enumerate(models, start=1):
        if list(m.names) != list(names[:k]):
            raise MissingCombinerState(f"controller {k} covers {m.names}, expected {names[:k]}")
    return lambda k: nlc_logits(models[k - 1], z[:k], features[:k])


def cascade_run(bundle, split, cfg: CascadeConfig | None = None):
    """Cascade over a bundle split; returns ``(predictions, trace)``."""
    cfg = cfg or CascadeConfig()
    order = order_backbones(bundle, cfg.order)
    names = [bundle.names[i] for i in order]
    z = bundle.load_logits(split, order)
    feats = bundle.load_features(split, order) if cfg.combiner == "nlc-per-prefix" else None
    combine = prefix_combiner(cfg, z, names, feats)
    gflops = bundle.gflops[order]
    pred, prefix, conf, cost = cascade_stack(z, gflops, cfg.threshold, combine)
    trace = CascadeTrace(names, prefix, conf, cost, pred, cfg.threshold, cfg.combiner)
    return pred, trace


def cascade_cost(trace: CascadeTrace, bundle=None) -> float:
    """Average GFLOPs per image.

    Averaged as a frequency-weighted sum over exit points, so a cascade in
    which every example exits at the same prefix costs exactly that prefix.
    """
    cost = np.asarray(trace.gflops, dtype=np.float64)
    n = len(cost)
    values, counts = np.unique(cost, return_counts=True)
    return float(sum((k / n) * v for v, k in zip(values, counts)))


def train_prefix_models(bundle, split, order_policy="gflops", cfg=None, indices=None):
    """One controller per prefix of the evaluation order (prefix k uses backbones 1..k)."""
    from .nlc import train_nlc

    order = order_backbones(bundle, order_policy)
    names = [bundle.names[i] for i in order]
    z = bundle.load_logits(split, order)
    feats = bundle.load_features(split, order)
    y = bundle.load_labels(split)
    if indices is not None:
        z, feats, y = z[:, indices], [f[indices] for f in feats], y[indices]
    return [train_nlc(z[:k], feats[:k], y, cfg, names=names[:k])[0] for k in range(1, len(order) + 1)]
