"""Seeded synthetic bundles with controllable accuracy and backbone diversity.

Every example gets a label and a *reliable* backbone index. With
probability ``rho`` the example is routed: the reliable backbone is correct
with probability ``reliable_acc`` and the others at a reduced rate that
keeps each backbone's marginal accuracy at its target; their correct sets
are laid out to overlap as little as possible. Otherwise every
backbone is independently correct at its target rate. Features carry a
noisy one-hot cue of the reliable backbone, which is what a learned
controller can exploit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InfeasibleRates
from .io import BackboneEntry, DatasetBundle, load_manifest, save_npy, write_manifest


@dataclass
class SynthConfig:
    classes: int = 10
    n_train: int = 5000
    n_test: int = 2000
    n_val: int = 0
    backbones: int = 3
    acc: list = field(default_factory=lambda: [0.7, 0.7, 0.7])
    rho: float = 0.8
    reliable_acc: float = 1.0
    margin: float = 2.0
    feature_dim: int = 16
    cue: float = 2.0
    seed: int = 0
    names: list | None = None
    gflops: list | None = None
    name: str = "synthetic"

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("need at least 2 classes")
        if len(self.acc) == 1 and self.backbones > 1:
            self.acc = list(self.acc) * self.backbones
        if len(self.acc) != self.backbones:
            raise ValueError(f"{len(self.acc)} accuracies for {self.backbones} backbones")
        if not all(0.0 < p < 1.0 for p in self.acc):
            raise ValueError("accuracies must be in (0, 1)")
        if not 0.0 <= self.rho <= 1.0 or not 0.0 <= self.reliable_acc <= 1.0:
            raise ValueError("rho and reliable_acc must be in [0, 1]")
        if self.margin <= 0 or self.cue < 0:
            raise ValueError("margin must be > 0 and cue >= 0")
        if self.feature_dim < self.backbones:
            raise ValueError("feature_dim must be >= backbones to embed the routing cue")
        if self.names is None:
            self.names = [f"bb{i}" for i in range(self.backbones)]
        if self.gflops is None:
            self.gflops = [10.0 * (i + 1) for i in range(self.backbones)]

    def routed_rates(self) -> np.ndarray:
        """Accuracy of a non-reliable backbone on routed examples."""
        b = self.backbones
        p = np.asarray(self.acc, dtype=np.float64)
        r = self.reliable_acc
        if self.rho == 0:
            return p.copy()
        if b == 1:
            if p[0] != r:
                raise InfeasibleRates(f"a single backbone with rho > 0 must have accuracy {r}")
            return p.copy()
        q = (b * p - r) / (b - 1)
        lo, hi = r / b, (b - 1 + r) / b
        bad = (q < 0) | (q > 1)
        if bad.any():
            raise InfeasibleRates(
                f"accuracies {p[bad].tolist()} infeasible with reliable_acc={r}; "
                f"feasible interval is [{lo:.4f}, {hi:.4f}]")
        return q


def _split(cfg, q, rng, n):
    c, b = cfg.classes, cfg.backbones
    y = rng.integers(0, c, size=n)
    reliable = rng.integers(0, b, size=n)
    routed = rng.uniform(size=n) < cfg.rho
    # one shared draw, read through staggered windows, keeps the other
    # backbones' routed correct sets as disjoint as their rates allow
    shared = rng.uniform(size=n)
    rows = np.arange(n)
    logits = np.empty((b, n, c), dtype=np.float32)
    feats = []
    for k in range(b):
        slot = (k - reliable - 1) % b
        window = (shared + slot / max(b - 1, 1)) % 1.0 < q[k]
        own = rng.uniform(size=n)
        routed_ok = np.where(reliable == k, own < cfg.reliable_acc, window)
        correct = np.where(routed, routed_ok, own < cfg.acc[k])
        top = np.where(correct, y, (y + rng.integers(1, c, size=n)) % c)
        runner = (top + rng.integers(1, c, size=n)) % c
        z = rng.normal(0.0, 1.0, size=(n, c))
        z[rows, top] = -np.inf
        z[rows, runner] = z.max(axis=1)
        z[rows, top] = z[rows, runner] + cfg.margin
        logits[k] = z
        f = rng.normal(0.0, 1.0, size=(n, cfg.feature_dim))
        f[rows, reliable] += cfg.cue
        feats.append(f.astype(np.float32))
    return {"logits": logits, "features": feats, "labels": y.astype(np.int64),
            "reliable": reliable, "routed": routed}


def generate_arrays(cfg: SynthConfig) -> dict:
    """In-memory splits: ``{split: {"logits", "features", "labels", "reliable", "routed"}}``."""
    q = cfg.routed_rates()
    sizes = {"train": cfg.n_train, "val": cfg.n_val, "test": cfg.n_test}
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(sizes))
    out = {}
    for (split, n), ss in zip(sizes.items(), seeds):
        if n > 0:
            out[split] = _split(cfg, q, np.random.default_rng(ss), n)
    return out


def synth_generate(cfg: SynthConfig, out_dir) -> DatasetBundle:
    """Write a manifest plus NPY files under ``out_dir`` and return the loaded bundle."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = generate_arrays(cfg)
    splits = [s for s in ("train", "val", "test") if s in data]
    labels = {}
    entries = []
    for s in splits:
        labels[s] = out / f"labels_{s}.npy"
        save_npy(data[s]["labels"], labels[s])
    for k, name in enumerate(cfg.names):
        logit_paths, feat_paths = {}, {}
        for s in splits:
            logit_paths[s] = out / f"{name}_logits_{s}.npy"
            feat_paths[s] = out / f"{name}_features_{s}.npy"
            save_npy(data[s]["logits"][k], logit_paths[s])
            save_npy(data[s]["features"][k], feat_paths[s])
        entries.append(BackboneEntry(name, float(cfg.gflops[k]), cfg.feature_dim, logit_paths, feat_paths))
    bundle = DatasetBundle(cfg.name, cfg.classes, splits, labels, entries, out)
    write_manifest(bundle, out / "manifest.json")
    return load_manifest(out / "manifest.json")
